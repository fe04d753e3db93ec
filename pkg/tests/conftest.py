"""Shared fixtures: the synthetic corpus, mock backends, oracle fixtures."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from opqrs.data_io import load_dataset
from opqrs.llm import prompt_fingerprint
from opqrs.prompts import PromptMethod, build_extraction_prompt, load_prompt_config
from opqrs.types import SCORED_ENTITIES


class _RecordingHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append({"body": body, "headers": dict(self.headers)})
        status, payload = self.server.responder(body)
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # keep test output quiet
        pass


@pytest.fixture
def http_server():
    """Factory for loopback chat-completion servers with request recording."""
    servers = []

    def start(responder):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _RecordingHandler)
        server.requests = []
        server.responder = responder
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return server, f"http://127.0.0.1:{server.server_address[1]}"

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_DATASET = DATA_DIR / "fixture_dataset.jsonl"


@pytest.fixture(scope="session")
def fixture_dataset():
    return load_dataset(FIXTURE_DATASET)


@pytest.fixture(scope="session")
def prompt_configs():
    return load_prompt_config()


def write_backend_toml(path: Path, *, fixtures_dir=None, canned=None, strict=True,
                       model="mock-model", max_in_flight=4) -> Path:
    lines = [
        'kind = "mock"',
        f'model_name = "{model}"',
        f"max_in_flight = {max_in_flight}",
        "",
        "[mock]",
    ]
    if fixtures_dir is not None:
        lines.append(f'fixtures_dir = {json.dumps(str(fixtures_dir))}')
    if canned is not None:
        lines.append(f'canned_response = {json.dumps(canned)}')
    lines.append(f"strict = {str(strict).lower()}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def bulk_write_fixtures(fixtures_dir: Path, responses: dict) -> None:
    """Write {rendered prompt: response} as mock fixture files + one index."""
    fixtures_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    index_path = fixtures_dir / "index.json"
    if index_path.exists():
        index = json.loads(index_path.read_text(encoding="utf-8"))
    for rendered, response in responses.items():
        digest = prompt_fingerprint(rendered)
        (fixtures_dir / f"{digest}.txt").write_text(response, encoding="utf-8")
        index[digest] = {"file": f"{digest}.txt", "finish_reason": "stop"}
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")


def oracle_responses(records, configs, methods, answer_for=None) -> dict:
    """Mock responses that echo the gold phrase (first replica) in "@...@".

    ``answer_for(note_id, entity, gold)`` can override the emitted answer
    text to produce deliberately wrong or absent predictions.
    """
    responses = {}
    for method in methods:
        for entity in SCORED_ENTITIES:
            golds = {}
            notes = {}
            for record in records:
                if record.entity is not entity:
                    continue
                golds.setdefault(record.note.id, record.gold_phrase)
                notes.setdefault(record.note.id, record.note)
            for note_id, gold in golds.items():
                prompt = build_extraction_prompt(entity, notes[note_id], method,
                                                 configs[entity])
                answer = gold
                if answer_for is not None:
                    answer = answer_for(note_id, entity, gold)
                wrapped = f"@{answer}@" if answer else "@ @"
                responses[prompt.rendered] = (
                    "Reasoning steps:\n1) looking for the chief complaint.\n"
                    f"2) Provide the final phrase. - {wrapped}"
                )
    return responses


def make_oracle_backend(tmp_path: Path, records, configs,
                        methods=(PromptMethod.OURS,), answer_for=None) -> Path:
    """Backend TOML whose fixtures answer every prompt with the gold phrase."""
    fixtures_dir = tmp_path / "fixtures"
    bulk_write_fixtures(fixtures_dir, oracle_responses(records, configs, methods,
                                                       answer_for=answer_for))
    return write_backend_toml(tmp_path / "backend.toml", fixtures_dir=fixtures_dir)
