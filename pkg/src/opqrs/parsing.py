"""Extract the delimiter-marked final answer from free-form completion text."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .types import ParseStatus

_SPAN_RE = re.compile(r"@([^@]*)@")


@dataclass(frozen=True)
class ParseOutcome:
    phrase: str
    status: ParseStatus
    span_count: int


def normalize(phrase: str) -> str:
    """Canonical form used for matching: trimmed, single-spaced, lowercase.

    Trailing sentence periods are stripped; no stemming, no other
    punctuation handling. Idempotent by construction.
    """
    collapsed = " ".join(phrase.split()).lower()
    return collapsed.rstrip(". ")


def _classify_span(content: str) -> str:
    """One of "phrase", "empty_answer", "artifact" for a span's content."""
    if content and not content.strip():
        return "empty_answer"  # the "@ @" encoding for an absent entity
    if normalize(content):
        return "phrase"
    return "artifact"  # "" from "@@", or punctuation-only junk like "@.@"


def parse_delimited(raw: str) -> ParseOutcome:
    """Find "@...@" spans in ``raw`` and select the final answer.

    Spans are maximal non-overlapping "@content@" regions with no "@"
    inside, scanned left to right. The LAST selectable span wins: prompts
    instruct the model to emit its final answer last, and few-shot answers
    echoed in reasoning appear earlier. Total: never raises, any input
    accepted.

    Span contents are either a phrase (normalizes to something non-empty),
    an empty-answer marker (whitespace only, as in "@ @"), or an artifact
    ("@@", punctuation-only junk) that is never selected.

    Statuses: fewer than two "@" characters -> NO_DELIMITERS; every span
    an artifact -> DEGENERATE; more than one span found -> MULTIPLE_SPANS
    (selection still occurs, so the last-span rule's frequency stays
    measurable); otherwise PARSED / PARSED_EMPTY. The parsed phrase is
    kept raw; normalization for matching is a separate explicit step.
    """
    if raw.count("@") < 2:
        return ParseOutcome(phrase="", status=ParseStatus.NO_DELIMITERS, span_count=0)

    spans = [m.group(1) for m in _SPAN_RE.finditer(raw)]
    selected = None
    for content in reversed(spans):
        if _classify_span(content) != "artifact":
            selected = content
            break
    if selected is None:
        return ParseOutcome(phrase="", status=ParseStatus.DEGENERATE, span_count=len(spans))

    if len(spans) > 1:
        status = ParseStatus.MULTIPLE_SPANS
    elif _classify_span(selected) == "phrase":
        status = ParseStatus.PARSED
    else:
        status = ParseStatus.PARSED_EMPTY
    phrase = selected if _classify_span(selected) == "phrase" else ""
    return ParseOutcome(phrase=phrase, status=status, span_count=len(spans))
