"""End-to-end orchestration: extract, score, compare methods."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .data_io import DataError
from .llm import BackendConfig, FinishReason, complete_batch, prompt_fingerprint
from .metrics import (
    DEFAULT_EMBEDDING_THRESHOLD,
    EntityMetrics,
    aggregate,
    make_judge_fn,
    score_group,
)
from .parsing import normalize, parse_delimited
from .prompts import EntityPromptConfig, PromptMethod, build_extraction_prompt
from .types import (
    AnnotatedRecord,
    EntityKind,
    Extraction,
    GenerationParams,
    MatcherKind,
    MatchOutcome,
    ParseStatus,
    Verdict,
)


class PredictionAlignmentError(DataError):
    """Predictions and dataset do not cover the same (note, entity) pairs."""


@dataclass(frozen=True)
class ExtractionRun:
    extractions: tuple[Extraction, ...]
    prompt_hashes: tuple[dict, ...]  # one {note_id, entity, method, sha256} per prompt

    def status_histogram(self) -> Counter:
        return Counter(ext.parse_status.value for ext in self.extractions)


@dataclass
class EvaluationResult:
    outcomes: list[MatchOutcome]
    metrics: dict  # EntityKind -> EntityMetrics
    judgments: dict  # (note_id, EntityKind) -> bool, True when fully consistent with gold
    degenerate: Counter = field(default_factory=Counter)


def run_extraction(
    records: Sequence[AnnotatedRecord],
    entities: Sequence[EntityKind],
    method: PromptMethod,
    configs: dict,
    backend: BackendConfig,
    params: Optional[GenerationParams] = None,
) -> ExtractionRun:
    """Build prompts, complete them, and parse answers for every unique
    (note, entity) pair; replicas of a multi-mention record share one
    prompt. Backend failures become degenerate extractions, never aborts.
    """
    if params is None:
        params = GenerationParams.extraction_defaults()
    jobs = []
    keys = []
    hashes = []
    for entity in entities:
        seen = set()
        for record in records:
            if record.entity is not entity or record.note.id in seen:
                continue
            seen.add(record.note.id)
            prompt = build_extraction_prompt(entity, record.note, method, configs[entity])
            jobs.append((prompt, params))
            keys.append((record.note.id, entity))
            hashes.append({
                "note_id": record.note.id,
                "entity": entity.ident,
                "method": method.value,
                "sha256": prompt_fingerprint(prompt.rendered),
            })
    if not jobs:
        return ExtractionRun(extractions=(), prompt_hashes=())
    results = complete_batch(jobs, backend)
    extractions = []
    for (note_id, entity), result in zip(keys, results):
        if result.finish_reason is FinishReason.ERROR:
            extractions.append(Extraction(
                note_id=note_id, entity=entity, prompt_method=method.value,
                raw_output=result.text, parsed_phrase="",
                parse_status=ParseStatus.DEGENERATE,
            ))
            continue
        outcome = parse_delimited(result.text)
        status = outcome.status
        if result.finish_reason is FinishReason.LENGTH and status is ParseStatus.NO_DELIMITERS:
            # a truncated completion must not masquerade as "entity absent"
            status = ParseStatus.DEGENERATE
        extractions.append(Extraction(
            note_id=note_id, entity=entity, prompt_method=method.value,
            raw_output=result.text, parsed_phrase=outcome.phrase,
            parse_status=status,
        ))
    return ExtractionRun(extractions=tuple(extractions), prompt_hashes=tuple(hashes))


def prediction_string(extraction: Extraction) -> str:
    """Normalized prediction used for matching; "" means "entity absent"."""
    if extraction.parse_status in (ParseStatus.PARSED, ParseStatus.MULTIPLE_SPANS):
        return normalize(extraction.parsed_phrase)
    return ""


def evaluate_predictions(
    records: Sequence[AnnotatedRecord],
    extractions: Sequence[Extraction],
    matcher: MatcherKind,
    *,
    configs: Optional[dict] = None,
    judge_backend: Optional[BackendConfig] = None,
    judge_params: Optional[GenerationParams] = None,
    judge_template: Optional[str] = None,
    similarity_fn=None,
    threshold: float = DEFAULT_EMBEDDING_THRESHOLD,
    human_verdicts: Optional[dict] = None,
    entities: Optional[Sequence[EntityKind]] = None,
) -> EvaluationResult:
    """Score extractions against gold records, grouped by (note, entity).

    Every gold group must have exactly one extraction and vice versa
    (within the evaluated entities); anything else is an alignment error.
    Degenerate extractions count against the prediction: a false positive
    when gold is empty, otherwise one false negative per gold replica.
    """
    groups: dict = {}
    order = []
    for record in records:
        if entities is not None and record.entity not in entities:
            continue
        key = (record.note.id, record.entity)
        if key not in groups:
            order.append(key)
        groups.setdefault(key, []).append(normalize(record.gold_phrase))

    ext_map: dict = {}
    for ext in extractions:
        if entities is not None and ext.entity not in entities:
            continue
        key = (ext.note_id, ext.entity)
        if key in ext_map:
            raise PredictionAlignmentError(
                f"duplicate prediction for ({key[0]!r}, {key[1].ident})"
            )
        ext_map[key] = ext
    missing = [k for k in order if k not in ext_map]
    if missing:
        raise PredictionAlignmentError(
            f"no prediction for ({missing[0][0]!r}, {missing[0][1].ident})"
        )
    extra = [k for k in ext_map if k not in groups]
    if extra:
        raise PredictionAlignmentError(
            f"prediction for ({extra[0][0]!r}, {extra[0][1].ident}) has no gold records"
        )

    judge_fns: dict = {}

    def judge_fn_for(entity: EntityKind):
        if entity not in judge_fns:
            if configs is None or judge_backend is None:
                raise PredictionAlignmentError(
                    "llm_judge matcher requires prompt configs and a judge backend"
                )
            judge_fns[entity] = make_judge_fn(
                entity, configs[entity], judge_backend,
                params=judge_params, template=judge_template,
            )
        return judge_fns[entity]

    human_fn = None
    if matcher is MatcherKind.HUMAN:
        if human_verdicts is None:
            raise PredictionAlignmentError("human matcher requires imported judgments")

        def human_fn(note_id, entity):
            key = (note_id, entity)
            if key not in human_verdicts:
                raise PredictionAlignmentError(
                    f"no human judgment for ({note_id!r}, {entity.ident})"
                )
            return human_verdicts[key]

    outcomes: list[MatchOutcome] = []
    judgments: dict = {}
    degenerate: Counter = Counter()
    for key in order:
        note_id, entity = key
        golds = groups[key]
        ext = ext_map[key]
        if ext.parse_status is ParseStatus.DEGENERATE:
            degenerate[entity.ident] += 1
            if golds == [""]:
                group_outcomes = [MatchOutcome(note_id=note_id, entity=entity,
                                               matcher=matcher, verdict=Verdict.FP)]
            else:
                group_outcomes = [MatchOutcome(note_id=note_id, entity=entity,
                                               matcher=matcher, verdict=Verdict.FN)
                                  for _ in golds]
        else:
            group_outcomes = score_group(
                prediction_string(ext), golds, matcher,
                entity=entity, note_id=note_id,
                judge_fn=judge_fn_for(entity) if matcher is MatcherKind.LLM_JUDGE else None,
                similarity_fn=similarity_fn, threshold=threshold, human_fn=human_fn,
            )
        outcomes.extend(group_outcomes)
        judgments[key] = all(
            o.verdict in (Verdict.TP, Verdict.TN) for o in group_outcomes
        )

    present = []
    for key in order:
        if key[1] not in present:
            present.append(key[1])
    metrics = {
        entity: aggregate([o for o in outcomes if o.entity is entity], entity)
        for entity in present
    }
    return EvaluationResult(
        outcomes=outcomes, metrics=metrics, judgments=judgments, degenerate=degenerate,
    )


@dataclass
class CompareResult:
    entities: tuple[EntityKind, ...]
    methods: tuple[PromptMethod, ...]
    metrics: dict   # (EntityKind, PromptMethod) -> EntityMetrics
    errors: dict    # (EntityKind, PromptMethod) -> str
    matcher: MatcherKind

    def f1(self, entity: EntityKind, method: PromptMethod):
        cell = self.metrics.get((entity, method))
        return None if cell is None else cell.f1


def compare_methods(
    records: Sequence[AnnotatedRecord],
    methods: Sequence[PromptMethod],
    matcher: MatcherKind,
    backend: BackendConfig,
    configs: dict,
    *,
    entities: Sequence[EntityKind],
    params: Optional[GenerationParams] = None,
    judge_backend: Optional[BackendConfig] = None,
    judge_params: Optional[GenerationParams] = None,
    similarity_fn=None,
    threshold: float = DEFAULT_EMBEDDING_THRESHOLD,
) -> CompareResult:
    """Run extract+evaluate for every (entity, method) cell.

    A failing cell is recorded in ``errors`` and left out of ``metrics``;
    it never aborts the rest of the table.
    """
    if not methods:
        raise ValueError("compare_methods requires at least one method")
    metrics: dict = {}
    errors: dict = {}
    for method in methods:
        for entity in entities:
            try:
                run = run_extraction(records, [entity], method, configs, backend, params)
                result = evaluate_predictions(
                    records, run.extractions, matcher,
                    configs=configs, judge_backend=judge_backend,
                    judge_params=judge_params, similarity_fn=similarity_fn,
                    threshold=threshold, entities=[entity],
                )
                metrics[(entity, method)] = result.metrics[entity]
            except Exception as exc:  # noqa: BLE001 - per-cell tolerance by contract
                errors[(entity, method)] = str(exc)
    return CompareResult(
        entities=tuple(entities), methods=tuple(methods),
        metrics=metrics, errors=errors, matcher=matcher,
    )
