"""Scoring: the classify decision table, P/R/F1 aggregation, Cohen's kappa.

Counting follows the exact-mode convention: a prediction that matches no
gold phrase while both are non-empty contributes one false positive (the
spurious prediction) AND one false negative (the missed gold). True
negatives never enter precision/recall/F1. All ratios are computed in
exact rational arithmetic and only formatted as decimals at report time.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .llm import BackendConfig, complete
from .parsing import normalize, parse_delimited
from .prompts import EntityPromptConfig, build_judge_prompt
from .types import (
    EntityKind,
    GenerationParams,
    MatcherKind,
    MatchOutcome,
    ParseStatus,
    Verdict,
)

DEFAULT_EMBEDDING_THRESHOLD = 0.85

JUDGE_CLARIFICATION = "\n\nAnswer strictly with @yes@ or @no@ and nothing else after it."


class MetricsError(Exception):
    """Base for scoring failures."""


class MixedEntitiesError(MetricsError):
    """aggregate() received outcomes from more than one entity."""


class LengthMismatchError(MetricsError):
    """Paired judgment lists differ in length or alignment."""


class JudgeUnparseableError(MetricsError):
    """The judge completion had no @yes@/@no@ verdict, even after retry."""


@dataclass(frozen=True)
class EntityMetrics:
    entity: EntityKind
    tp: int
    fp: int
    fn: int
    tn: int
    precision: Fraction
    recall: Fraction
    f1: Fraction


@dataclass(frozen=True)
class AgreementReport:
    entity: Optional[EntityKind]
    kappa: Fraction
    n: int
    observed_agreement: Fraction
    expected_agreement: Fraction


def classify(
    prediction: str,
    gold: str,
    matcher: MatcherKind,
    *,
    entity: EntityKind,
    note_id: str = "",
    judge_fn: Optional[Callable[[str, str], bool]] = None,
    similarity_fn: Optional[Callable[[str, str], float]] = None,
    threshold: float = DEFAULT_EMBEDDING_THRESHOLD,
    human_fn: Optional[Callable[[str, EntityKind], bool]] = None,
) -> MatchOutcome:
    """Score one normalized prediction against one normalized gold phrase.

    Decision table: both empty -> TN; gold empty -> FP; prediction empty
    -> FN; both non-empty -> TP on a match, MISMATCH otherwise. String
    equality is always tested first, so a soft matcher is consulted only
    on inequality; this guarantees soft-match F1 dominates exact F1.
    """

    def outcome(verdict, similarity=None):
        return MatchOutcome(
            note_id=note_id, entity=entity, matcher=matcher,
            verdict=verdict, similarity=similarity,
        )

    if not prediction and not gold:
        return outcome(Verdict.TN)
    if not gold:
        return outcome(Verdict.FP)
    if not prediction:
        return outcome(Verdict.FN)
    if prediction == gold:
        return outcome(Verdict.TP)
    if matcher is MatcherKind.EXACT:
        return outcome(Verdict.MISMATCH)
    if matcher is MatcherKind.LLM_JUDGE:
        if judge_fn is None:
            raise MetricsError("llm_judge matcher requires a judge_fn")
        return outcome(Verdict.TP if judge_fn(prediction, gold) else Verdict.MISMATCH)
    if matcher is MatcherKind.EMBEDDING:
        if similarity_fn is None:
            raise MetricsError("embedding matcher requires a similarity_fn")
        score = similarity_fn(prediction, gold)
        verdict = Verdict.TP if score >= threshold else Verdict.MISMATCH
        return outcome(verdict, similarity=score)
    if matcher is MatcherKind.HUMAN:
        if human_fn is None:
            raise MetricsError("human matcher requires imported judgments")
        return outcome(Verdict.TP if human_fn(note_id, entity) else Verdict.MISMATCH)
    raise MetricsError(f"unhandled matcher {matcher!r}")  # pragma: no cover


def score_group(
    prediction: str,
    golds: Sequence[str],
    matcher: MatcherKind,
    *,
    entity: EntityKind,
    note_id: str = "",
    judge_fn=None,
    similarity_fn=None,
    threshold: float = DEFAULT_EMBEDDING_THRESHOLD,
    human_fn=None,
) -> list[MatchOutcome]:
    """Score one prediction against every gold replica of a (note, entity).

    A single prediction can match at most one replica: exact match first,
    then the soft matcher (highest similarity wins for the embedding
    matcher). Unmatched replicas count as false negatives, so a repeated
    mention never turns one correct prediction into several true positives.
    """
    kwargs = dict(
        entity=entity, note_id=note_id, judge_fn=judge_fn,
        similarity_fn=similarity_fn, threshold=threshold, human_fn=human_fn,
    )
    if len(golds) == 1:
        return [classify(prediction, golds[0], matcher, **kwargs)]
    if any(not g for g in golds):
        raise MetricsError(
            f"({note_id}, {entity.ident}): empty gold replica in a multi-mention group"
        )

    def outcome(verdict, similarity=None):
        return MatchOutcome(
            note_id=note_id, entity=entity, matcher=matcher,
            verdict=verdict, similarity=similarity,
        )

    if not prediction:
        return [outcome(Verdict.FN) for _ in golds]

    matched = None  # index of the replica the prediction matches
    similarity = None
    for i, gold in enumerate(golds):
        if prediction == gold:
            matched = i
            break
    if matched is None and matcher is MatcherKind.LLM_JUDGE:
        for i, gold in enumerate(golds):
            if judge_fn(prediction, gold):
                matched = i
                break
    elif matched is None and matcher is MatcherKind.EMBEDDING:
        scores = [similarity_fn(prediction, gold) for gold in golds]
        best = max(range(len(golds)), key=lambda i: (scores[i], -i))
        similarity = scores[best]
        if scores[best] >= threshold:
            matched = best
    elif matched is None and matcher is MatcherKind.HUMAN:
        if human_fn(note_id, entity):
            matched = 0
    if matched is not None:
        return [
            outcome(Verdict.TP, similarity if i == matched else None)
            if i == matched else outcome(Verdict.FN)
            for i in range(len(golds))
        ]
    # no replica matched: one spurious prediction plus every gold missed
    results = [outcome(Verdict.MISMATCH, similarity)]
    results.extend(outcome(Verdict.FN) for _ in golds[1:])
    return results


def aggregate(outcomes: Sequence[MatchOutcome], entity: EntityKind) -> EntityMetrics:
    """Sum verdicts into counts and compute exact P/R/F1 for one entity."""
    tp = fp = fn = tn = 0
    for out in outcomes:
        if out.entity is not entity:
            raise MixedEntitiesError(
                f"outcome for {out.entity.ident} passed to aggregate({entity.ident})"
            )
        if out.verdict is Verdict.TP:
            tp += 1
        elif out.verdict is Verdict.FP:
            fp += 1
        elif out.verdict is Verdict.FN:
            fn += 1
        elif out.verdict is Verdict.TN:
            tn += 1
        else:  # MISMATCH: spurious prediction + missed gold
            fp += 1
            fn += 1
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = Fraction(0)
    return EntityMetrics(
        entity=entity, tp=tp, fp=fp, fn=fn, tn=tn,
        precision=precision, recall=recall, f1=f1,
    )


def cohen_kappa(a: Sequence, b: Sequence, entity: Optional[EntityKind] = None) -> AgreementReport:
    """Chance-corrected agreement between two aligned binary judgment lists.

    kappa = (po - pe) / (1 - pe). When pe = 1 both raters are constant and
    equal, so agreement is perfect and kappa is defined as 1.
    """
    if len(a) != len(b) or not a:
        raise LengthMismatchError(
            f"judgment lists must be non-empty and equal length, got {len(a)} and {len(b)}"
        )
    xs = [1 if x else 0 for x in a]
    ys = [1 if y else 0 for y in b]
    n = len(xs)
    po = Fraction(sum(1 for x, y in zip(xs, ys) if x == y), n)
    pa1 = Fraction(sum(xs), n)
    pb1 = Fraction(sum(ys), n)
    pe = pa1 * pb1 + (1 - pa1) * (1 - pb1)
    kappa = Fraction(1) if pe == 1 else (po - pe) / (1 - pe)
    return AgreementReport(
        entity=entity, kappa=kappa, n=n, observed_agreement=po, expected_agreement=pe,
    )


def _parse_judge_verdict(text: str) -> Optional[bool]:
    outcome = parse_delimited(text)
    token = normalize(outcome.phrase)
    if outcome.status in (ParseStatus.PARSED, ParseStatus.MULTIPLE_SPANS):
        if token == "yes":
            return True
        if token == "no":
            return False
    return None


def judge_with_llm(
    prediction: str,
    gold: str,
    entity: EntityKind,
    config: EntityPromptConfig,
    backend: BackendConfig,
    params: Optional[GenerationParams] = None,
    template: Optional[str] = None,
) -> bool:
    """Ask the backend whether ``prediction`` matches ``gold``; True = yes.

    One retry with an appended clarification instruction if the completion
    carries no parseable @yes@/@no@ verdict.
    """
    if params is None:
        params = GenerationParams.judge_defaults()
    prompt = build_judge_prompt(entity, gold, prediction, config, template=template)
    result = complete(prompt, params, backend)
    verdict = _parse_judge_verdict(result.text)
    if verdict is None:
        retry = complete(prompt.rendered + JUDGE_CLARIFICATION, params, backend)
        verdict = _parse_judge_verdict(retry.text)
    if verdict is None:
        raise JudgeUnparseableError(
            f"judge returned no @yes@/@no@ verdict for ({prediction!r}, {gold!r})"
        )
    return verdict


def make_judge_fn(
    entity: EntityKind,
    config: EntityPromptConfig,
    backend: BackendConfig,
    params: Optional[GenerationParams] = None,
    template: Optional[str] = None,
) -> Callable[[str, str], bool]:
    """Bind judge_with_llm to one entity's config for use in classify()."""

    def judge(prediction: str, gold: str) -> bool:
        return judge_with_llm(prediction, gold, entity, config, backend,
                              params=params, template=template)

    return judge


def sweep_threshold(
    scored_pairs: Sequence[tuple[str, EntityKind, float, bool]],
    human_verdicts: dict,
    candidates: Optional[Sequence[float]] = None,
) -> tuple[float, Fraction]:
    """Calibrate the embedding threshold against imported human judgments.

    ``scored_pairs`` rows are (note_id, entity, similarity, exact_equal);
    for each candidate threshold the implied auto verdict is
    exact_equal or similarity >= threshold, and the threshold whose
    verdicts maximize Cohen's kappa with the human verdicts wins. Ties go
    to the lowest threshold.
    """
    if candidates is None:
        candidates = [i / 100 for i in range(50, 100)]
    keys = [(note_id, entity) for note_id, entity, _, _ in scored_pairs]
    human = [human_verdicts[k] for k in keys]
    best = None
    for threshold in candidates:
        auto = [eq or s >= threshold for _, _, s, eq in scored_pairs]
        try:
            kappa = cohen_kappa(auto, human).kappa
        except LengthMismatchError:
            raise
        if best is None or kappa > best[1]:
            best = (threshold, kappa)
    return best
