"""Report emission: CSV/JSON tables, heatmap matrix, and rendered figures.

Column order is fixed, reals are serialized with 3 decimal places, and the
same input always produces byte-identical files. Figures are rendered to
PNG next to the delimited output.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import AgreementReport, EntityMetrics
from .pipeline import CompareResult
from .prompts import PromptMethod
from .types import EntityKind

#: Fixed PNG metadata so figure bytes do not vary with library versions.
_PNG_METADATA = {"Software": "opqrs"}

FOOTNOTES = (
    "a both-non-empty mismatch counts as one false positive plus one false negative",
    "multi-mention gold replicas: a prediction can match at most one replica; "
    "unmatched replicas count as false negatives",
    "degenerate completions count against the prediction: false positive when gold "
    "is empty, otherwise false negative",
)


def fmt(value) -> str:
    """3-decimal fixed-point rendering used in every report."""
    return f"{float(value):.3f}"


def _save_figure(fig, path) -> None:
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Entity metrics (evaluate)
# ---------------------------------------------------------------------------


def write_metrics_report(
    metrics: Sequence[EntityMetrics],
    csv_path=None,
    json_path=None,
    extra: Optional[dict] = None,
) -> None:
    if not metrics:
        raise ValueError("no metrics to report")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["entity", "tp", "fp", "fn", "tn", "precision", "recall", "f1"])
            for m in metrics:
                writer.writerow([
                    m.entity.ident, m.tp, m.fp, m.fn, m.tn,
                    fmt(m.precision), fmt(m.recall), fmt(m.f1),
                ])
    if json_path:
        payload = {
            "rows": [
                {
                    "entity": m.entity.ident,
                    "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn,
                    "precision": fmt(m.precision),
                    "recall": fmt(m.recall),
                    "f1": fmt(m.f1),
                }
                for m in metrics
            ],
            "footnotes": list(FOOTNOTES),
        }
        if extra:
            payload.update(extra)
        Path(json_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def render_metrics_figure(metrics: Sequence[EntityMetrics], png_path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    names = [m.entity.ident for m in metrics]
    values = [float(m.f1) for m in metrics]
    ax.bar(names, values, color="#4878d0")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    ax.set_title("Entity extraction F1")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    _save_figure(fig, png_path)


# ---------------------------------------------------------------------------
# Method comparison (compare / ablate)
# ---------------------------------------------------------------------------


def _ranked_methods(result: CompareResult, entity: EntityKind):
    scored = [
        (method, result.f1(entity, method))
        for method in result.methods
        if result.f1(entity, method) is not None
    ]
    scored.sort(key=lambda pair: pair[1], reverse=True)
    best = scored[0][0].value if scored else None
    second = scored[1][0].value if len(scored) > 1 else None
    return best, second


def write_method_table(result: CompareResult, csv_path=None, json_path=None) -> None:
    method_ids = [m.value for m in result.methods]
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["entity"] + method_ids)
            for entity in result.entities:
                row = [entity.ident]
                for method in result.methods:
                    value = result.f1(entity, method)
                    row.append("" if value is None else fmt(value))
                writer.writerow(row)
    if json_path:
        rows = []
        for entity in result.entities:
            best, second = _ranked_methods(result, entity)
            cells = {}
            for method in result.methods:
                metrics = result.metrics.get((entity, method))
                if metrics is None:
                    cells[method.value] = None
                else:
                    cells[method.value] = {
                        "f1": fmt(metrics.f1),
                        "precision": fmt(metrics.precision),
                        "recall": fmt(metrics.recall),
                        "tp": metrics.tp, "fp": metrics.fp,
                        "fn": metrics.fn, "tn": metrics.tn,
                    }
            rows.append({
                "entity": entity.ident,
                "cells": cells,
                "best": best,
                "second_best": second,
            })
        payload = {
            "matcher": result.matcher.value,
            "methods": method_ids,
            "rows": rows,
            "errors": {
                f"{entity.ident}/{method.value}": message
                for (entity, method), message in sorted(
                    result.errors.items(), key=lambda kv: (kv[0][0].ident, kv[0][1].value)
                )
            },
            "footnotes": list(FOOTNOTES),
        }
        Path(json_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_heatmap_matrix(result: CompareResult, csv_path) -> None:
    """Entity x method F1 matrix (rows/columns in canonical order)."""
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity"] + [m.value for m in result.methods])
        for entity in result.entities:
            row = [entity.ident]
            for method in result.methods:
                value = result.f1(entity, method)
                row.append("" if value is None else fmt(value))
            writer.writerow(row)


def render_heatmap_figure(result: CompareResult, png_path) -> None:
    values = [
        [
            float(result.f1(entity, method)) if result.f1(entity, method) is not None
            else float("nan")
            for method in result.methods
        ]
        for entity in result.entities
    ]
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(result.methods),
                                    1.2 + 0.55 * len(result.entities)))
    image = ax.imshow(values, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(result.methods)))
    ax.set_xticklabels([m.value for m in result.methods], rotation=30, ha="right")
    ax.set_yticks(range(len(result.entities)))
    ax.set_yticklabels([e.ident for e in result.entities])
    for i, row in enumerate(values):
        for j, value in enumerate(row):
            if value == value:  # skip NaN cells
                ax.text(j, i, f"{value:.3f}", ha="center", va="center",
                        color="white" if value < 0.6 else "black", fontsize=8)
    ax.set_title("F1 by entity and prompting method")
    fig.colorbar(image, ax=ax, shrink=0.85)
    fig.tight_layout()
    _save_figure(fig, png_path)


def write_ablation_table(result: CompareResult, csv_path=None, json_path=None) -> None:
    """Three-row ablation shape: one row per method for a single entity."""
    entity = result.entities[0]
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "f1"])
            for method in result.methods:
                value = result.f1(entity, method)
                writer.writerow([method.value, "" if value is None else fmt(value)])
    if json_path:
        rows = []
        for method in result.methods:
            metrics = result.metrics.get((entity, method))
            rows.append({
                "method": method.value,
                "f1": None if metrics is None else fmt(metrics.f1),
                "error": result.errors.get((entity, method)),
            })
        payload = {
            "entity": entity.ident,
            "matcher": result.matcher.value,
            "rows": rows,
            "footnotes": list(FOOTNOTES),
        }
        Path(json_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def render_ablation_figure(result: CompareResult, png_path) -> None:
    entity = result.entities[0]
    names = [m.value for m in result.methods]
    values = [
        float(result.f1(entity, m)) if result.f1(entity, m) is not None else 0.0
        for m in result.methods
    ]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, values, color=["#4878d0", "#ee854a", "#6acc64"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    ax.set_title(f"Ablation on {entity.ident}")
    ax.tick_params(axis="x", rotation=15)
    fig.tight_layout()
    _save_figure(fig, png_path)


@dataclass(frozen=True)
class MatrixView:
    """Just enough of a comparison to re-render the matrix and heatmap."""

    entities: tuple
    methods: tuple
    values: dict  # (EntityKind, PromptMethod) -> float | None

    def f1(self, entity, method):
        return self.values.get((entity, method))


def load_method_table_json(path) -> MatrixView:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    methods = tuple(PromptMethod.parse(m) for m in data["methods"])
    entities = []
    values = {}
    for row in data["rows"]:
        entity = EntityKind.parse(row["entity"])
        entities.append(entity)
        for method in methods:
            cell = row["cells"].get(method.value)
            values[(entity, method)] = None if cell is None else float(cell["f1"])
    return MatrixView(entities=tuple(entities), methods=methods, values=values)


# ---------------------------------------------------------------------------
# Agreement (Table-1 shape)
# ---------------------------------------------------------------------------


def write_agreement_report(
    rows: Sequence[dict],
    auto_names: Sequence[str],
    csv_path=None,
    json_path=None,
) -> None:
    """Rows carry: entity, kappa per auto matcher, f1_human, f1 per matcher.

    Each row dict maps: "entity" -> EntityKind, "kappa" -> {name: AgreementReport},
    "f1_human" -> Fraction, "f1_auto" -> {name: Fraction}.
    """
    header = (
        ["entity"]
        + [f"kappa_{name}" for name in auto_names]
        + ["f1_human"]
        + [f"f1_{name}" for name in auto_names]
    )
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                out = [row["entity"].ident]
                out.extend(fmt(row["kappa"][name].kappa) for name in auto_names)
                out.append(fmt(row["f1_human"]))
                out.extend(fmt(row["f1_auto"][name]) for name in auto_names)
                writer.writerow(out)
    if json_path:
        payload = {
            "auto_matchers": list(auto_names),
            "rows": [
                {
                    "entity": row["entity"].ident,
                    "kappa": {
                        name: {
                            "kappa": fmt(row["kappa"][name].kappa),
                            "n": row["kappa"][name].n,
                            "observed_agreement": fmt(row["kappa"][name].observed_agreement),
                            "expected_agreement": fmt(row["kappa"][name].expected_agreement),
                        }
                        for name in auto_names
                    },
                    "f1_human": fmt(row["f1_human"]),
                    "f1_auto": {name: fmt(row["f1_auto"][name]) for name in auto_names},
                }
                for row in rows
            ],
        }
        Path(json_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def render_agreement_figure(rows: Sequence[dict], auto_names: Sequence[str], png_path) -> None:
    fig, ax = plt.subplots(figsize=(7.5, 4))
    entities = [row["entity"].ident for row in rows]
    width = 0.8 / max(len(auto_names), 1)
    for k, name in enumerate(auto_names):
        xs = [i + k * width for i in range(len(rows))]
        ys = [float(row["kappa"][name].kappa) for row in rows]
        ax.bar(xs, ys, width=width, label=f"kappa {name}")
    ax.set_xticks([i + width * (len(auto_names) - 1) / 2 for i in range(len(rows))])
    ax.set_xticklabels(entities, rotation=30, ha="right")
    ax.set_ylim(-1, 1.05)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_ylabel("Cohen's kappa")
    ax.set_title("Agreement with human judgments")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, png_path)
