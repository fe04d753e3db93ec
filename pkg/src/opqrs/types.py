"""Shared domain vocabulary: entities, records, generation parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class EntityKind(Enum):
    """The seven scorable OPQRS labels plus the auxiliary chief complaint.

    ChiefComplaint is extracted as an intermediate step inside prompts but
    is never a scored target by default. There is deliberately no Time
    entity: the annotation guideline this pipeline follows never assigns
    one, so modeling it would create a label no dataset can carry.
    """

    ONSET = "onset"
    PROVOCATION = "provocation"
    PALLIATION = "palliation"
    QUALITY = "quality"
    REGION = "region"
    RADIATION = "radiation"
    SEVERITY = "severity"
    CHIEF_COMPLAINT = "chief_complaint"

    @property
    def ident(self) -> str:
        """Canonical lowercase identifier, safe for file names and CLI flags."""
        return self.value

    @property
    def display(self) -> str:
        """Human-readable name as used inside prompt text."""
        if self is EntityKind.CHIEF_COMPLAINT:
            return "Chief Complaint"
        return self.value.capitalize()

    @classmethod
    def parse(cls, ident: str) -> "EntityKind":
        key = ident.strip().lower().replace("-", "_")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown entity kind: {ident!r}")


#: Scored targets in canonical report order.
SCORED_ENTITIES = (
    EntityKind.ONSET,
    EntityKind.PROVOCATION,
    EntityKind.PALLIATION,
    EntityKind.QUALITY,
    EntityKind.REGION,
    EntityKind.RADIATION,
    EntityKind.SEVERITY,
)


@dataclass(frozen=True)
class HpiNote:
    """One History-of-Present-Illness narrative, kept byte-exact from source."""

    id: str
    text: str


@dataclass(frozen=True)
class AnnotatedRecord:
    """One (note, entity, gold phrase) triple.

    An empty gold_phrase means the entity is absent from the note. Multiple
    mentions of the same entity appear as multiple records sharing note.id
    and entity, each with a distinct gold_phrase.
    """

    note: HpiNote
    entity: EntityKind
    gold_phrase: str


def validate_record(record: AnnotatedRecord) -> list[str]:
    """Return every violated annotation rule for ``record`` (empty = ok).

    Violations are data, not failures; callers decide whether to reject.
    """
    violations = []
    if not record.note.id:
        violations.append("empty id")
    if record.gold_phrase and not record.gold_phrase.strip():
        violations.append("whitespace-only gold")
    if record.entity is EntityKind.CHIEF_COMPLAINT:
        violations.append("chief_complaint is not a scored target")
    return violations


@dataclass(frozen=True)
class GenerationParams:
    """Sampling parameters passed through to the completion backend."""

    temperature: float = 1.0
    top_p: float = 0.95
    top_k: Optional[int] = 30
    max_tokens: int = 2000

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k is not None and self.top_k <= 0:
            raise ValueError("top_k must be positive or unset")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def extraction_defaults(cls) -> "GenerationParams":
        return cls(max_tokens=2000)

    @classmethod
    def judge_defaults(cls) -> "GenerationParams":
        return cls(max_tokens=500)


class ParseStatus(Enum):
    """Outcome of extracting the delimited answer from a completion."""

    PARSED = "parsed"
    PARSED_EMPTY = "parsed_empty"
    NO_DELIMITERS = "no_delimiters"
    MULTIPLE_SPANS = "multiple_spans"
    DEGENERATE = "degenerate"

    @classmethod
    def parse(cls, ident: str) -> "ParseStatus":
        for status in cls:
            if status.value == ident:
                return status
        raise ValueError(f"unknown parse status: {ident!r}")


#: Statuses under which parsed_phrase is an unambiguous answer.
TRUSTED_STATUSES = frozenset({ParseStatus.PARSED, ParseStatus.PARSED_EMPTY})


@dataclass(frozen=True)
class Extraction:
    """Raw completion plus parsed answer for one (note, entity) pair.

    raw_output is retained verbatim for audit even when parsing succeeds.
    """

    note_id: str
    entity: EntityKind
    prompt_method: str
    raw_output: str
    parsed_phrase: str
    parse_status: ParseStatus


class MatcherKind(Enum):
    """How a prediction is compared against a gold phrase."""

    EXACT = "exact"
    LLM_JUDGE = "llm_judge"
    EMBEDDING = "embedding"
    HUMAN = "human"

    @classmethod
    def parse(cls, ident: str) -> "MatcherKind":
        key = ident.strip().lower().replace("-", "_")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown matcher: {ident!r}")


class Verdict(Enum):
    """Classification of one prediction against one gold phrase.

    MISMATCH is the both-non-empty, no-match case; it aggregates as one
    false positive (spurious prediction) plus one false negative (missed
    gold), the standard exact-mode counting convention.
    """

    TP = "tp"
    FP = "fp"
    FN = "fn"
    TN = "tn"
    MISMATCH = "mismatch"


@dataclass(frozen=True)
class MatchOutcome:
    """One scored comparison, with provenance of how it was decided."""

    note_id: str
    entity: EntityKind
    matcher: MatcherKind
    verdict: Verdict
    similarity: Optional[float] = None

    def __post_init__(self):
        if self.similarity is not None and self.matcher is not MatcherKind.EMBEDDING:
            raise ValueError("similarity is only meaningful for the embedding matcher")
