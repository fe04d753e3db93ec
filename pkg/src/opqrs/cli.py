"""Command-line pipeline: extract, evaluate, agreement, compare, ablate, report.

Exit codes: 0 success, 1 usage/config error, 2 data validation error,
3 backend unreachable. Every invocation gets a run directory holding the
resolved configs, a prompt hash manifest, and copies of the outputs, so a
run can be audited and replayed.
"""

from __future__ import annotations

import dataclasses
import json
import shutil
import sys
import time
import uuid
from collections import Counter
from pathlib import Path

import click
import yaml

from . import data_io, reporting
from .data_io import DataError
from .llm import (
    AuthMissingError,
    BackendConfig,
    BackendConfigError,
    BackendKind,
    LlmError,
    load_backend_config,
)
from .metrics import (
    DEFAULT_EMBEDDING_THRESHOLD,
    LengthMismatchError,
    MetricsError,
    cohen_kappa,
)
from .pipeline import compare_methods, evaluate_predictions, run_extraction
from .prompts import (
    ABLATION_METHODS,
    COMPARE_METHODS,
    PromptConfigError,
    PromptError,
    PromptMethod,
    load_prompt_config,
)
from .similarity import SimilarityClient, SimilarityServiceDownError
from .types import EntityKind, GenerationParams, MatcherKind, SCORED_ENTITIES


class CliConfigError(Exception):
    """Bad flags or unusable configuration; exits 1."""


def _parse_entities(value: str):
    if value.strip().lower() == "all":
        return list(SCORED_ENTITIES)
    entities = []
    for ident in value.split(","):
        try:
            entity = EntityKind.parse(ident)
        except ValueError as exc:
            raise CliConfigError(str(exc))
        if entity is EntityKind.CHIEF_COMPLAINT:
            raise CliConfigError("chief_complaint is not a scored extraction target")
        entities.append(entity)
    return entities


def _load_backend(path) -> BackendConfig:
    if path is None:
        raise CliConfigError("a --backend config file is required")
    if not Path(path).exists():
        raise CliConfigError(f"backend config not found: {path}")
    return load_backend_config(path)


def _load_prompt_configs(path):
    if path is not None and not Path(path).exists():
        raise CliConfigError(f"prompt config not found: {path}")
    return load_prompt_config(path)


def _load_dataset(path):
    if path is None or not Path(path).exists():
        raise CliConfigError(f"dataset not found: {path}")
    return data_io.load_dataset(path)


def _load_predictions(path):
    if path is None or not Path(path).exists():
        raise CliConfigError(f"predictions not found: {path}")
    return data_io.load_predictions(path)


def _build_params(base: GenerationParams, temperature, top_p, top_k, max_tokens):
    kwargs = dataclasses.asdict(base)
    if temperature is not None:
        kwargs["temperature"] = temperature
    if top_p is not None:
        kwargs["top_p"] = top_p
    if top_k is not None:
        kwargs["top_k"] = None if top_k == 0 else top_k
    if max_tokens is not None:
        kwargs["max_tokens"] = max_tokens
    try:
        return GenerationParams(**kwargs)
    except ValueError as exc:
        raise CliConfigError(str(exc))


def _check_threshold(threshold: float) -> float:
    if not (0.0 <= threshold <= 1.0):
        raise CliConfigError(f"--threshold must be in [0, 1], got {threshold}")
    return threshold


def _make_run_dir(run_dir, command: str) -> Path:
    if run_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path("runs") / f"{command}-{stamp}-{uuid.uuid4().hex[:6]}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _snapshot_configs(run_dir: Path, backend: BackendConfig = None, configs=None):
    if backend is not None:
        raw = dataclasses.asdict(backend)
        raw["kind"] = backend.kind.value
        if raw.get("fixtures_dir") is not None:
            raw["fixtures_dir"] = str(raw["fixtures_dir"])
        (run_dir / "resolved_backend.json").write_text(
            json.dumps(raw, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    if configs is not None:
        dump = {
            entity.ident: {
                "definition": cfg.definition,
                "cue_label": cfg.cue_label,
                "cue_phrases": list(cfg.cue_phrases),
                "cc_cue_phrases": list(cfg.cc_cue_phrases),
                "reasoning_steps": list(cfg.reasoning_steps),
                "self_verification": cfg.self_verification,
                "few_shot": [
                    {
                        "hpi": shot.hpi_text,
                        "reasoning": list(shot.reasoning_lines),
                        "answer": shot.final_answer,
                    }
                    for shot in cfg.few_shot
                ],
            }
            for entity, cfg in configs.items()
        }
        (run_dir / "resolved_prompt_config.yaml").write_text(
            yaml.safe_dump(dump, sort_keys=True, allow_unicode=True), encoding="utf-8"
        )


def _write_prompt_hashes(run_dir: Path, hashes):
    (run_dir / "prompt_hashes.json").write_text(
        json.dumps(list(hashes), indent=2) + "\n", encoding="utf-8"
    )


def _copy_into_run_dir(run_dir: Path, *paths):
    for path in paths:
        path = Path(path)
        if path.exists() and path.parent.resolve() != run_dir.resolve():
            shutil.copy2(path, run_dir / path.name)


def _similarity_fn_from_flags(similarity_url, similarity_component, timeout=30.0):
    client = SimilarityClient(similarity_url, timeout=timeout, component=similarity_component)
    client.health()  # fail fast with "backend unreachable" before scoring
    return client.similarity_fn()


@click.group()
def cli():
    """OPQRS entity extraction and evaluation pipeline."""


@cli.command("extract")
@click.option("--dataset", "dataset_path", required=True, help="dataset JSONL")
@click.option("--entity", default="all", help="entity ident or 'all'")
@click.option("--method", "method_id", default="ours", help="prompt method")
@click.option("--backend", "backend_path", required=True, help="backend config TOML")
@click.option("--prompt-config", "prompt_config_path", default=None)
@click.option("--out", "out_path", required=True, help="predictions JSONL to write")
@click.option("--run-dir", default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--top-p", type=float, default=None)
@click.option("--top-k", type=int, default=None, help="0 disables top_k")
@click.option("--max-tokens", type=int, default=None)
def cmd_extract(dataset_path, entity, method_id, backend_path, prompt_config_path,
                out_path, run_dir, temperature, top_p, top_k, max_tokens):
    """Build prompts, run the backend, parse answers, write predictions."""
    try:
        method = PromptMethod.parse(method_id)
    except PromptError as exc:
        raise CliConfigError(str(exc))
    entities = _parse_entities(entity)
    backend = _load_backend(backend_path)
    configs = _load_prompt_configs(prompt_config_path)
    params = _build_params(GenerationParams.extraction_defaults(),
                           temperature, top_p, top_k, max_tokens)
    dataset = _load_dataset(dataset_path)

    all_extractions = []
    all_hashes = []
    histogram = Counter()
    for target in entities:
        run = run_extraction(dataset.records, [target], method, configs, backend, params)
        all_extractions.extend(run.extractions)
        all_hashes.extend(run.prompt_hashes)
        histogram.update(run.status_histogram())
        click.echo(f"{target.ident}: {len(run.extractions)} notes extracted")
    data_io.write_predictions(all_extractions, out_path)
    click.echo("parse status histogram: " + " ".join(
        f"{status}={histogram[status]}" for status in sorted(histogram)
    ))
    click.echo(f"wrote {len(all_extractions)} predictions to {out_path}")

    rd = _make_run_dir(run_dir, "extract")
    _snapshot_configs(rd, backend=backend, configs=configs)
    _write_prompt_hashes(rd, all_hashes)
    if Path(out_path).resolve() != (rd / "predictions.jsonl").resolve():
        shutil.copy2(out_path, rd / "predictions.jsonl")


@cli.command("evaluate")
@click.option("--dataset", "dataset_path", required=True)
@click.option("--predictions", "predictions_path", required=True)
@click.option("--matcher", "matcher_id", default="exact",
              help="exact | llm-judge | embedding | human")
@click.option("--threshold", type=float, default=DEFAULT_EMBEDDING_THRESHOLD)
@click.option("--similarity-url", default=None)
@click.option("--similarity-component", default="f1",
              help="which service score to threshold: precision | recall | f1")
@click.option("--backend", "backend_path", default=None, help="judge backend TOML")
@click.option("--prompt-config", "prompt_config_path", default=None)
@click.option("--human", "human_path", default=None, help="human judgments CSV")
@click.option("--out", "out_path", default=None, help="metrics CSV (json/png siblings)")
@click.option("--judgments-out", "judgments_path", default=None)
@click.option("--run-dir", default=None)
def cmd_evaluate(dataset_path, predictions_path, matcher_id, threshold, similarity_url,
                 similarity_component, backend_path, prompt_config_path, human_path,
                 out_path, judgments_path, run_dir):
    """Score predictions against gold annotations."""
    try:
        matcher = MatcherKind.parse(matcher_id)
    except ValueError as exc:
        raise CliConfigError(str(exc))
    threshold = _check_threshold(threshold)
    dataset = _load_dataset(dataset_path)
    extractions = _load_predictions(predictions_path)

    configs = None
    judge_backend = None
    similarity_fn = None
    human_verdicts = None
    if matcher is MatcherKind.LLM_JUDGE:
        judge_backend = _load_backend(backend_path)
        configs = _load_prompt_configs(prompt_config_path)
    elif matcher is MatcherKind.EMBEDDING:
        if similarity_url is None:
            raise CliConfigError("--matcher embedding requires --similarity-url")
        if similarity_component not in ("precision", "recall", "f1"):
            raise CliConfigError(
                f"--similarity-component must be precision, recall or f1, "
                f"got {similarity_component!r}"
            )
        similarity_fn = _similarity_fn_from_flags(similarity_url, similarity_component)
    elif matcher is MatcherKind.HUMAN:
        if human_path is None or not Path(human_path).exists():
            raise CliConfigError("--matcher human requires --human judgments CSV")
        human_verdicts = data_io.load_judgments(human_path)

    result = evaluate_predictions(
        dataset.records, extractions, matcher,
        configs=configs, judge_backend=judge_backend,
        similarity_fn=similarity_fn, threshold=threshold,
        human_verdicts=human_verdicts,
    )
    ordered = [result.metrics[e] for e in SCORED_ENTITIES if e in result.metrics]
    for m in ordered:
        click.echo(
            f"{m.entity.ident}: P={reporting.fmt(m.precision)} "
            f"R={reporting.fmt(m.recall)} F1={reporting.fmt(m.f1)} "
            f"(tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn})"
        )
    if result.degenerate:
        click.echo("degenerate completions: " + " ".join(
            f"{k}={v}" for k, v in sorted(result.degenerate.items())
        ))

    written = []
    if out_path:
        out_path = Path(out_path)
        json_path = out_path.with_suffix(".json")
        png_path = out_path.with_suffix(".png")
        reporting.write_metrics_report(
            ordered, csv_path=out_path, json_path=json_path,
            extra={"matcher": matcher.value,
                   "degenerate": dict(sorted(result.degenerate.items()))},
        )
        reporting.render_metrics_figure(ordered, png_path)
        written = [out_path, json_path, png_path]
        click.echo(f"wrote {out_path}, {json_path.name}, {png_path.name}")
    if judgments_path:
        data_io.write_judgments(result.judgments, judgments_path)
        written.append(Path(judgments_path))
        click.echo(f"wrote judgments to {judgments_path}")

    rd = _make_run_dir(run_dir, "evaluate")
    _snapshot_configs(rd, backend=judge_backend, configs=configs)
    _copy_into_run_dir(rd, *written)


@cli.command("agreement")
@click.option("--dataset", "dataset_path", required=True)
@click.option("--predictions", "predictions_path", required=True)
@click.option("--human", "human_path", required=True, help="human judgments CSV")
@click.option("--auto", "auto_specs", multiple=True,
              help="NAME=PATH of an automatic judgments CSV (repeatable)")
@click.option("--out", "out_path", default=None, help="agreement CSV (json/png siblings)")
@click.option("--run-dir", default=None)
def cmd_agreement(dataset_path, predictions_path, human_path, auto_specs, out_path, run_dir):
    """Cohen's kappa of automatic matchers against human judgments."""
    if not auto_specs:
        raise CliConfigError("at least one --auto NAME=PATH is required")
    dataset = _load_dataset(dataset_path)
    extractions = _load_predictions(predictions_path)
    if not Path(human_path).exists():
        raise CliConfigError(f"human judgments not found: {human_path}")
    human = data_io.load_judgments(human_path)

    autos = {}
    for spec in auto_specs:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise CliConfigError(f"--auto expects NAME=PATH, got {spec!r}")
        if not Path(path).exists():
            raise CliConfigError(f"automatic judgments not found: {path}")
        autos[name] = data_io.load_judgments(path)

    # group keys present in the predictions define the alignment universe
    keys = sorted({(e.note_id, e.entity) for e in extractions},
                  key=lambda k: (k[0], k[1].ident))
    for name, verdicts in [("human", human)] + list(autos.items()):
        for key in keys:
            if key not in verdicts:
                raise LengthMismatchError(
                    f"{name} judgments missing ({key[0]!r}, {key[1].ident})"
                )

    f1_human = {
        e: m.f1 for e, m in evaluate_predictions(
            dataset.records, extractions, MatcherKind.HUMAN, human_verdicts=human
        ).metrics.items()
    }
    f1_auto: dict = {}
    for name, verdicts in autos.items():
        f1_auto[name] = {
            e: m.f1 for e, m in evaluate_predictions(
                dataset.records, extractions, MatcherKind.HUMAN, human_verdicts=verdicts
            ).metrics.items()
        }

    rows = []
    entities = [e for e in SCORED_ENTITIES if any(k[1] is e for k in keys)]
    for entity in entities:
        entity_keys = [k for k in keys if k[1] is entity]
        kappa = {
            name: cohen_kappa([autos[name][k] for k in entity_keys],
                              [human[k] for k in entity_keys], entity=entity)
            for name in autos
        }
        rows.append({
            "entity": entity,
            "kappa": kappa,
            "f1_human": f1_human[entity],
            "f1_auto": {name: f1_auto[name][entity] for name in autos},
        })
        kappa_text = " ".join(
            f"kappa[{name}]={reporting.fmt(kappa[name].kappa)}" for name in autos
        )
        click.echo(f"{entity.ident}: {kappa_text} f1_human={reporting.fmt(f1_human[entity])}")

    written = []
    if out_path:
        out_path = Path(out_path)
        json_path = out_path.with_suffix(".json")
        png_path = out_path.with_suffix(".png")
        names = list(autos)
        reporting.write_agreement_report(rows, names, csv_path=out_path, json_path=json_path)
        reporting.render_agreement_figure(rows, names, png_path)
        written = [out_path, json_path, png_path]
        click.echo(f"wrote {out_path}, {json_path.name}, {png_path.name}")
    rd = _make_run_dir(run_dir, "agreement")
    _copy_into_run_dir(rd, *written)


def _comparison_command(dataset_path, backend_path, prompt_config_path, matcher_id,
                        threshold, similarity_url, similarity_component, methods,
                        entities, out_dir, run_dir, command, temperature=None,
                        top_p=None, top_k=None, max_tokens=None):
    try:
        matcher = MatcherKind.parse(matcher_id)
    except ValueError as exc:
        raise CliConfigError(str(exc))
    if matcher is MatcherKind.HUMAN:
        raise CliConfigError(f"{command} supports exact, llm-judge or embedding matchers")
    threshold = _check_threshold(threshold)
    backend = _load_backend(backend_path)
    configs = _load_prompt_configs(prompt_config_path)
    dataset = _load_dataset(dataset_path)
    params = _build_params(GenerationParams.extraction_defaults(),
                           temperature, top_p, top_k, max_tokens)
    similarity_fn = None
    if matcher is MatcherKind.EMBEDDING:
        if similarity_url is None:
            raise CliConfigError("--matcher embedding requires --similarity-url")
        similarity_fn = _similarity_fn_from_flags(similarity_url, similarity_component)
    result = compare_methods(
        dataset.records, methods, matcher, backend, configs,
        entities=entities, params=params,
        judge_backend=backend if matcher is MatcherKind.LLM_JUDGE else None,
        similarity_fn=similarity_fn, threshold=threshold,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return result, out_dir, backend, configs


_comparison_options = [
    click.option("--dataset", "dataset_path", required=True),
    click.option("--backend", "backend_path", required=True),
    click.option("--prompt-config", "prompt_config_path", default=None),
    click.option("--matcher", "matcher_id", default="exact"),
    click.option("--threshold", type=float, default=DEFAULT_EMBEDDING_THRESHOLD),
    click.option("--similarity-url", default=None),
    click.option("--similarity-component", default="f1"),
    click.option("--out-dir", required=True),
    click.option("--run-dir", default=None),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@cli.command("compare")
@_add_options(_comparison_options)
@click.option("--methods", default="prefix,cloze,anticipatory,cot,heuristic,ours")
@click.option("--entity", default="all")
def cmd_compare(dataset_path, backend_path, prompt_config_path, matcher_id, threshold,
                similarity_url, similarity_component, out_dir, run_dir, methods, entity):
    """F1 for every prompting method, plus the entity x method heatmap."""
    try:
        method_list = [PromptMethod.parse(m) for m in methods.split(",")]
    except PromptError as exc:
        raise CliConfigError(str(exc))
    entities = _parse_entities(entity)
    result, out_dir, backend, configs = _comparison_command(
        dataset_path, backend_path, prompt_config_path, matcher_id, threshold,
        similarity_url, similarity_component, method_list, entities, out_dir,
        run_dir, "compare",
    )
    table_csv = out_dir / "compare.csv"
    table_json = out_dir / "compare.json"
    heatmap_csv = out_dir / "heatmap.csv"
    heatmap_png = out_dir / "heatmap.png"
    reporting.write_method_table(result, csv_path=table_csv, json_path=table_json)
    reporting.write_heatmap_matrix(result, heatmap_csv)
    reporting.render_heatmap_figure(result, heatmap_png)
    for entity_kind in result.entities:
        cells = " ".join(
            f"{m.value}={reporting.fmt(result.f1(entity_kind, m))}"
            if result.f1(entity_kind, m) is not None else f"{m.value}=failed"
            for m in result.methods
        )
        click.echo(f"{entity_kind.ident}: {cells}")
    if result.errors:
        click.echo(f"{len(result.errors)} cell(s) failed; see compare.json", err=True)
    click.echo(f"wrote {table_csv}, {table_json.name}, {heatmap_csv.name}, {heatmap_png.name}")
    rd = _make_run_dir(run_dir, "compare")
    _snapshot_configs(rd, backend=backend, configs=configs)
    _copy_into_run_dir(rd, table_csv, table_json, heatmap_csv, heatmap_png)


@cli.command("ablate")
@_add_options(_comparison_options)
@click.option("--entity", default="onset", help="single entity to ablate")
def cmd_ablate(dataset_path, backend_path, prompt_config_path, matcher_id, threshold,
               similarity_url, similarity_component, out_dir, run_dir, entity):
    """Full prompt vs the two ablations, for one entity."""
    entities = _parse_entities(entity)
    if len(entities) != 1:
        raise CliConfigError("ablate runs on exactly one entity")
    result, out_dir, backend, configs = _comparison_command(
        dataset_path, backend_path, prompt_config_path, matcher_id, threshold,
        similarity_url, similarity_component, list(ABLATION_METHODS), entities,
        out_dir, run_dir, "ablate",
    )
    table_csv = out_dir / "ablation.csv"
    table_json = out_dir / "ablation.json"
    figure_png = out_dir / "ablation.png"
    reporting.write_ablation_table(result, csv_path=table_csv, json_path=table_json)
    reporting.render_ablation_figure(result, figure_png)
    for method in result.methods:
        value = result.f1(result.entities[0], method)
        click.echo(f"{method.value}: "
                   + (reporting.fmt(value) if value is not None else "failed"))
    click.echo(f"wrote {table_csv}, {table_json.name}, {figure_png.name}")
    rd = _make_run_dir(run_dir, "ablate")
    _snapshot_configs(rd, backend=backend, configs=configs)
    _copy_into_run_dir(rd, table_csv, table_json, figure_png)


@cli.command("report")
@click.option("--compare-json", "compare_json", required=True,
              help="compare.json from a previous run")
@click.option("--out-dir", required=True)
def cmd_report(compare_json, out_dir):
    """Re-render the heatmap figure and matrix from a saved comparison."""
    if not Path(compare_json).exists():
        raise CliConfigError(f"comparison report not found: {compare_json}")
    view = reporting.load_method_table_json(compare_json)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    heatmap_csv = out_dir / "heatmap.csv"
    heatmap_png = out_dir / "heatmap.png"
    reporting.write_heatmap_matrix(view, heatmap_csv)
    reporting.render_heatmap_figure(view, heatmap_png)
    click.echo(f"wrote {heatmap_csv}, {heatmap_png.name}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except (CliConfigError, BackendConfigError, PromptConfigError, PromptError,
            AuthMissingError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (DataError, MetricsError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except (LlmError, SimilarityServiceDownError) as exc:
        click.echo(f"backend unreachable: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
