"""Chat-completion backends: a live OpenAI-compatible endpoint and a mock.

The mock backend answers from a directory of fixture files keyed by the
sha256 of the rendered prompt (plus an index file), or from a single canned
response; it makes zero network traffic and is byte-deterministic, which is
what every test and offline run relies on.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import requests

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .prompts import PromptSpec
from .types import GenerationParams

logger = logging.getLogger(__name__)


class LlmError(Exception):
    """Base for backend failures."""


class AuthMissingError(LlmError):
    """The configured credential environment variable is unset."""


class FixtureMissingError(LlmError):
    """Strict mock backend has no fixture for this prompt."""


class HttpError(LlmError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(f"HTTP {status}: {message}" if message else f"HTTP {status}")
        self.status = status


class TimeoutError_(LlmError):
    """Request timed out after retries."""


class BackendConfigError(LlmError):
    """Backend config file is malformed."""


class BackendKind(Enum):
    LIVE = "live"
    MOCK = "mock"


class FinishReason(Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff: float = 2.0


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    model_name: str
    endpoint_url: Optional[str] = None
    auth_token_env: Optional[str] = None
    request_timeout: float = 120.0
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    # "auto": send top_k, drop it (once, with a warning) if the endpoint
    # rejects it; "always"/"never" skip the probe
    top_k_mode: str = "auto"
    fixtures_dir: Optional[Path] = None
    canned_response: Optional[str] = None
    strict_fixtures: bool = True

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise BackendConfigError("max_in_flight must be >= 1")
        if self.kind is BackendKind.LIVE and not self.endpoint_url:
            raise BackendConfigError("live backend requires endpoint_url")
        if self.top_k_mode not in ("auto", "always", "never"):
            raise BackendConfigError("top_k_mode must be auto, always or never")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: FinishReason
    latency: float
    error: Optional[str] = None


def load_backend_config(path) -> BackendConfig:
    """Read a backend config TOML file; mock paths resolve relative to it."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise BackendConfigError(f"cannot read backend config {path}: {exc}") from exc
    try:
        kind = BackendKind(raw.get("kind", ""))
    except ValueError:
        raise BackendConfigError(f"{path}: kind must be 'live' or 'mock'")
    retry_raw = raw.get("retry", {})
    retry = RetryPolicy(
        max_attempts=int(retry_raw.get("max_attempts", 3)),
        base_backoff=float(retry_raw.get("base_backoff", 2.0)),
    )
    live = raw.get("live", {})
    mock = raw.get("mock", {})
    fixtures_dir = mock.get("fixtures_dir")
    if fixtures_dir is not None:
        fixtures_dir = (path.parent / fixtures_dir).resolve()
    try:
        return BackendConfig(
            kind=kind,
            model_name=raw.get("model_name", ""),
            endpoint_url=live.get("endpoint_url"),
            auth_token_env=live.get("auth_token_env"),
            request_timeout=float(raw.get("request_timeout", 120.0)),
            max_in_flight=int(raw.get("max_in_flight", 4)),
            retry=retry,
            top_k_mode=live.get("top_k_mode", "auto"),
            fixtures_dir=fixtures_dir,
            canned_response=mock.get("canned_response"),
            strict_fixtures=bool(mock.get("strict", True)),
        )
    except (TypeError, ValueError) as exc:
        raise BackendConfigError(f"{path}: {exc}") from exc


def prompt_fingerprint(rendered: str) -> str:
    return hashlib.sha256(rendered.encode("utf-8")).hexdigest()


def write_mock_fixture(fixtures_dir, prompt_text: str, response: str,
                       finish_reason: str = "stop") -> str:
    """Store a mock response for ``prompt_text``; returns the fingerprint."""
    fixtures_dir = Path(fixtures_dir)
    fixtures_dir.mkdir(parents=True, exist_ok=True)
    digest = prompt_fingerprint(prompt_text)
    (fixtures_dir / f"{digest}.txt").write_text(response, encoding="utf-8")
    index_path = fixtures_dir / "index.json"
    index = {}
    if index_path.exists():
        index = json.loads(index_path.read_text(encoding="utf-8"))
    index[digest] = {"file": f"{digest}.txt", "finish_reason": finish_reason}
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
    return digest


# endpoints (by URL) that rejected top_k; warn only on first rejection
_TOP_K_REJECTED: set = set()


def _mock_complete(rendered: str, backend: BackendConfig) -> CompletionResult:
    if backend.fixtures_dir is not None:
        digest = prompt_fingerprint(rendered)
        index_path = backend.fixtures_dir / "index.json"
        entry = None
        if index_path.exists():
            entry = json.loads(index_path.read_text(encoding="utf-8")).get(digest)
        fixture_path = backend.fixtures_dir / (entry["file"] if entry else f"{digest}.txt")
        if fixture_path.exists():
            finish = FinishReason(entry["finish_reason"]) if entry else FinishReason.STOP
            return CompletionResult(
                text=fixture_path.read_text(encoding="utf-8"),
                finish_reason=finish,
                latency=0.0,
            )
    if backend.canned_response is not None:
        return CompletionResult(
            text=backend.canned_response, finish_reason=FinishReason.STOP, latency=0.0
        )
    if backend.strict_fixtures:
        raise FixtureMissingError(
            f"no fixture for prompt {prompt_fingerprint(rendered)[:12]}... and no canned response"
        )
    return CompletionResult(text="", finish_reason=FinishReason.STOP, latency=0.0)


def _live_complete(rendered: str, params: GenerationParams,
                   backend: BackendConfig) -> CompletionResult:
    headers = {"Content-Type": "application/json"}
    if backend.auth_token_env:
        token = os.environ.get(backend.auth_token_env)
        if not token:
            raise AuthMissingError(
                f"environment variable {backend.auth_token_env} is not set"
            )
        headers["Authorization"] = f"Bearer {token}"
    body = {
        "model": backend.model_name,
        "messages": [{"role": "user", "content": rendered}],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    }
    send_top_k = (
        params.top_k is not None
        and backend.top_k_mode != "never"
        and not (backend.top_k_mode == "auto" and backend.endpoint_url in _TOP_K_REJECTED)
    )
    if send_top_k:
        body["top_k"] = params.top_k

    url = backend.endpoint_url.rstrip("/") + "/chat/completions"
    started = time.monotonic()
    attempts = 0
    last_error: Exception = LlmError("no attempts made")
    while attempts < backend.retry.max_attempts:
        attempts += 1
        try:
            response = requests.post(
                url, json=body, headers=headers, timeout=backend.request_timeout
            )
        except requests.Timeout as exc:
            last_error = TimeoutError_(f"request timed out after {backend.request_timeout}s")
            _backoff(backend, attempts)
            continue
        except requests.RequestException as exc:
            last_error = HttpError(0, str(exc))
            _backoff(backend, attempts)
            continue
        if response.status_code == 400 and "top_k" in body and "top_k" in response.text:
            # endpoint does not accept top_k: drop it and retry this attempt
            if backend.endpoint_url not in _TOP_K_REJECTED:
                _TOP_K_REJECTED.add(backend.endpoint_url)
                logger.warning(
                    "endpoint %s rejected top_k; omitting it for this run",
                    backend.endpoint_url,
                )
            del body["top_k"]
            attempts -= 1
            continue
        if response.status_code in (429,) or response.status_code >= 500:
            last_error = HttpError(response.status_code, response.text[:200])
            _backoff(backend, attempts)
            continue
        if response.status_code != 200:
            raise HttpError(response.status_code, response.text[:200])
        payload = response.json()
        choice = payload["choices"][0]
        text = choice["message"]["content"]
        finish = choice.get("finish_reason", "stop")
        reason = FinishReason.LENGTH if finish == "length" else FinishReason.STOP
        return CompletionResult(
            text=text, finish_reason=reason, latency=time.monotonic() - started
        )
    raise last_error


def _backoff(backend: BackendConfig, attempt: int):
    if attempt < backend.retry.max_attempts:
        time.sleep(backend.retry.base_backoff * (2 ** (attempt - 1)))


def complete(prompt: Union[PromptSpec, str], params: GenerationParams,
             backend: BackendConfig) -> CompletionResult:
    """Run one completion. Thread-safe; raises on failure."""
    rendered = prompt.rendered if isinstance(prompt, PromptSpec) else prompt
    if not rendered:
        raise ValueError("rendered prompt must be non-empty")
    if backend.kind is BackendKind.MOCK:
        return _mock_complete(rendered, backend)
    return _live_complete(rendered, params, backend)


def complete_batch(jobs: Sequence[tuple], backend: BackendConfig) -> list:
    """Run ``(prompt, params)`` jobs with at most max_in_flight outstanding.

    Results come back in input order. A failing job becomes a result with
    finish_reason ERROR and the message in ``error``; it never aborts the
    batch.
    """
    if not jobs:
        raise ValueError("complete_batch requires at least one job")

    def run(job):
        prompt, params = job
        try:
            return complete(prompt, params, backend)
        except Exception as exc:  # noqa: BLE001 - embedded per-job by contract
            return CompletionResult(
                text="", finish_reason=FinishReason.ERROR, latency=0.0, error=str(exc)
            )

    workers = min(backend.max_in_flight, len(jobs))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))
