"""Load and persist datasets, predictions and judgments in stable formats.

Datasets and predictions are JSONL (one object per line, UTF-8, keys in a
fixed order); human judgments are CSV. Writers are deterministic: the same
input always produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .types import (
    AnnotatedRecord,
    EntityKind,
    Extraction,
    HpiNote,
    ParseStatus,
    SCORED_ENTITIES,
    validate_record,
)


class DataError(Exception):
    """Base for dataset/prediction file problems."""


class DatasetParseError(DataError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class InvariantViolationError(DataError):
    def __init__(self, path, line_no: int, rule: str):
        super().__init__(f"{path}:{line_no}: {rule}")
        self.rule = rule


class DuplicateRecordError(DataError):
    pass


class ManifestMismatchError(DataError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    version: str
    counts: dict        # records per entity ident
    annotated_counts: dict  # records with a non-empty gold phrase


@dataclass(frozen=True)
class DatasetFile:
    records: tuple[AnnotatedRecord, ...]
    manifest: DatasetManifest


def compute_manifest(records, name: str = "", version: str = "") -> DatasetManifest:
    counts = {e.ident: 0 for e in SCORED_ENTITIES}
    annotated = {e.ident: 0 for e in SCORED_ENTITIES}
    for record in records:
        counts[record.entity.ident] += 1
        if record.gold_phrase:
            annotated[record.entity.ident] += 1
    return DatasetManifest(name=name, version=version, counts=counts,
                           annotated_counts=annotated)


def manifest_path_for(dataset_path) -> Path:
    dataset_path = Path(dataset_path)
    return dataset_path.with_suffix(".manifest.json")


def load_dataset(path, manifest_path=None) -> DatasetFile:
    """Read a dataset JSONL file, validating every record and the manifest.

    Order-preserving. Rejects malformed lines, invariant violations
    (including chief_complaint rows and whitespace-only gold phrases),
    duplicate (note, entity, gold) triples, inconsistent note text for one
    note id, and an empty-gold record sharing a (note, entity) with other
    records. If a manifest sidecar exists its counts must match the data.
    """
    path = Path(path)
    records = []
    seen_triples = set()
    note_texts: dict = {}
    group_golds: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(path, line_no, f"invalid JSON: {exc}")
            missing = {"note_id", "hpi_text", "entity", "gold_phrase"} - set(row)
            if missing:
                raise DatasetParseError(path, line_no, f"missing fields: {sorted(missing)}")
            try:
                entity = EntityKind.parse(row["entity"])
            except ValueError as exc:
                raise InvariantViolationError(path, line_no, str(exc))
            record = AnnotatedRecord(
                note=HpiNote(id=row["note_id"], text=row["hpi_text"]),
                entity=entity,
                gold_phrase=row["gold_phrase"],
            )
            violations = validate_record(record)
            if violations:
                raise InvariantViolationError(path, line_no, "; ".join(violations))
            triple = (record.note.id, entity, record.gold_phrase)
            if triple in seen_triples:
                raise DuplicateRecordError(
                    f"{path}:{line_no}: duplicate record {triple[0]!r}/{entity.ident}"
                )
            seen_triples.add(triple)
            if note_texts.setdefault(record.note.id, record.note.text) != record.note.text:
                raise InvariantViolationError(
                    path, line_no, f"note {record.note.id!r} has inconsistent text"
                )
            group = group_golds.setdefault((record.note.id, entity), [])
            group.append(record.gold_phrase)
            if len(group) > 1 and any(not g for g in group):
                raise InvariantViolationError(
                    path, line_no,
                    f"({record.note.id!r}, {entity.ident}): empty gold cannot share "
                    "a group with other records",
                )
            records.append(record)

    manifest = compute_manifest(records, name=path.stem)
    sidecar = Path(manifest_path) if manifest_path else manifest_path_for(path)
    if sidecar.exists():
        stored = json.loads(sidecar.read_text(encoding="utf-8"))
        manifest = DatasetManifest(
            name=stored.get("name", path.stem),
            version=stored.get("version", ""),
            counts=manifest.counts,
            annotated_counts=manifest.annotated_counts,
        )
        for key in ("counts", "annotated_counts"):
            if key in stored and stored[key] != getattr(manifest, key):
                raise ManifestMismatchError(
                    f"{sidecar}: stored {key} differ from the data "
                    f"(stored {stored[key]}, actual {getattr(manifest, key)})"
                )
    return DatasetFile(records=tuple(records), manifest=manifest)


def write_dataset(records, path, name: str = "", version: str = "1") -> None:
    """Write records as JSONL plus a manifest sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(
                {
                    "note_id": record.note.id,
                    "hpi_text": record.note.text,
                    "entity": record.entity.ident,
                    "gold_phrase": record.gold_phrase,
                },
                ensure_ascii=False,
            ) + "\n")
    manifest = compute_manifest(records, name=name or path.stem, version=version)
    manifest_path_for(path).write_text(
        json.dumps(
            {
                "name": manifest.name,
                "version": manifest.version,
                "counts": manifest.counts,
                "annotated_counts": manifest.annotated_counts,
            },
            indent=2,
        ) + "\n",
        encoding="utf-8",
    )


def write_predictions(extractions, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for ext in extractions:
            fh.write(json.dumps(
                {
                    "note_id": ext.note_id,
                    "entity": ext.entity.ident,
                    "prompt_method": ext.prompt_method,
                    "raw_output": ext.raw_output,
                    "parsed_phrase": ext.parsed_phrase,
                    "parse_status": ext.parse_status.value,
                },
                ensure_ascii=False,
            ) + "\n")


def load_predictions(path) -> list[Extraction]:
    path = Path(path)
    extractions = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(path, line_no, f"invalid JSON: {exc}")
            try:
                extractions.append(Extraction(
                    note_id=row["note_id"],
                    entity=EntityKind.parse(row["entity"]),
                    prompt_method=row["prompt_method"],
                    raw_output=row["raw_output"],
                    parsed_phrase=row["parsed_phrase"],
                    parse_status=ParseStatus.parse(row["parse_status"]),
                ))
            except (KeyError, ValueError) as exc:
                raise DatasetParseError(path, line_no, str(exc))
    return extractions


def write_judgments(judgments: dict, path) -> None:
    """Write per-(note, entity) binary verdicts as a CSV, sorted by key."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["note_id", "entity", "verdict"])
        for (note_id, entity) in sorted(judgments, key=lambda k: (k[0], k[1].ident)):
            verdict = "correct" if judgments[(note_id, entity)] else "incorrect"
            writer.writerow([note_id, entity.ident, verdict])


def load_judgments(path) -> dict:
    """Read a judgments CSV into {(note_id, EntityKind): bool}."""
    path = Path(path)
    judgments = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"note_id", "entity", "verdict"}
        if reader.fieldnames is None or required - set(reader.fieldnames):
            raise DatasetParseError(path, 1, f"judgments CSV needs columns {sorted(required)}")
        for line_no, row in enumerate(reader, start=2):
            verdict = row["verdict"].strip().lower()
            if verdict not in ("correct", "incorrect"):
                raise DatasetParseError(
                    path, line_no, f"verdict must be correct/incorrect, got {row['verdict']!r}"
                )
            try:
                entity = EntityKind.parse(row["entity"])
            except ValueError as exc:
                raise DatasetParseError(path, line_no, str(exc))
            key = (row["note_id"], entity)
            if key in judgments:
                raise DuplicateRecordError(f"{path}:{line_no}: duplicate judgment for {key}")
            judgments[key] = verdict == "correct"
    return judgments
