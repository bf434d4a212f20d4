"""Workload similarity mapping and training-table augmentation.

Each target row is paired with the source row whose scaled knob vector is
nearest; per pruned metric the paired value vectors are compared, and the
per-metric distances are averaged into a workload score. The lowest-scoring
source is the match, and its rows (minus knob-config conflicts) are appended
to the target's rows as training data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import PrunedMetricSet
from .errors import ConfigError, DataError
from .ingest import WorkloadTable
from .predict import MAPE_EPS, StandardScaler, pruned_metric_indices

KNOB_CONFLICT_TOL = 1e-9
SCORE_VARIANTS = ("euclid", "mse", "mape")


@dataclass(frozen=True)
class WorkloadScore:
    source_workload_id: str
    per_metric_distance: dict[str, float]
    score: float


@dataclass(frozen=True)
class MappingResult:
    target_id: str
    scores: tuple[WorkloadScore, ...]
    chosen_source: str
    augmented: WorkloadTable
    conflicts_dropped: int


def _metric_distance(t_col: np.ndarray, s_col: np.ndarray, variant: str) -> float:
    diff = t_col - s_col
    if variant == "euclid":
        return float(np.sqrt(np.sum(diff ** 2)))
    if variant == "mse":
        return float(np.mean(diff ** 2))
    if variant == "mape":
        return float(100.0 * np.mean(np.abs(diff) / np.maximum(np.abs(t_col), MAPE_EPS)))
    raise ConfigError(f"unknown score variant {variant!r}")


def score_workloads(target: WorkloadTable, sources: list[WorkloadTable],
                    pruned: PrunedMetricSet, scaler: StandardScaler,
                    variant: str = "euclid") -> list[WorkloadScore]:
    """Score every source workload against the target; lower is more similar."""
    if not pruned.metric_names:
        raise DataError("empty pruned metric set")
    if target.n_rows < 1:
        raise DataError(f"target {target.workload_id} has no rows")
    idx = pruned_metric_indices(target.schema, pruned)
    t_knobs = scaler.transform_knobs(target.knobs)
    t_metrics = scaler.transform_metrics(target.metrics)[:, idx]

    scores = []
    for source in sorted(sources, key=lambda s: s.workload_id):
        if source.n_rows < 1:
            raise DataError(f"source {source.workload_id} has no rows")
        s_knobs = scaler.transform_knobs(source.knobs)
        s_metrics = scaler.transform_metrics(source.metrics)[:, idx]
        diff = t_knobs[:, None, :] - s_knobs[None, :, :]
        pair = np.einsum("ijk,ijk->ij", diff, diff).argmin(axis=1)
        paired = s_metrics[pair]
        per_metric = {
            name: _metric_distance(t_metrics[:, j], paired[:, j], variant)
            for j, name in enumerate(pruned.metric_names)
        }
        score = float(np.mean(list(per_metric.values())))
        scores.append(WorkloadScore(source.workload_id, per_metric, score))
    return scores


def nearest_workload(scores: list[WorkloadScore]) -> str:
    """Source id with the minimal score; ties break lexicographically."""
    if not scores:
        raise DataError("no workload scores")
    best = min(scores, key=lambda s: (s.score, s.source_workload_id))
    return best.source_workload_id


def augment(target: WorkloadTable, source: WorkloadTable) -> tuple[WorkloadTable, int]:
    """Target rows plus source rows whose raw knob config conflicts with none.

    A conflict is a source knob vector within 1e-9 of some target knob vector
    in every coordinate; conflicting source rows are dropped (the target's
    configuration wins).
    """
    if target.schema != source.schema:
        raise DataError("augment requires a shared schema")
    keep = []
    for i in range(source.n_rows):
        delta = np.abs(target.knobs - source.knobs[i])
        conflict = bool(np.any(np.all(delta <= KNOB_CONFLICT_TOL, axis=1))) if target.n_rows else False
        if not conflict:
            keep.append(i)
    dropped = source.n_rows - len(keep)
    merged = WorkloadTable(
        workload_id=target.workload_id,
        knobs=np.vstack([target.knobs, source.knobs[keep]]),
        metrics=np.vstack([target.metrics, source.metrics[keep]]),
        latency=np.concatenate([target.latency, source.latency[keep]]),
        schema=target.schema,
    )
    return merged, dropped


def map_and_augment(corpus_sources: list[WorkloadTable], target: WorkloadTable,
                    pruned: PrunedMetricSet, scaler: StandardScaler,
                    variant: str = "euclid") -> MappingResult:
    """Compose scoring, nearest-source selection and augmentation."""
    scores = score_workloads(target, corpus_sources, pruned, scaler, variant)
    chosen = nearest_workload(scores)
    source = next(s for s in corpus_sources if s.workload_id == chosen)
    augmented, dropped = augment(target, source)
    return MappingResult(target_id=target.workload_id, scores=tuple(scores),
                         chosen_source=chosen, augmented=augmented,
                         conflicts_dropped=dropped)


def mapping_report_csv(results: list[MappingResult]) -> str:
    lines = ["target_id,source_id,score,chosen,conflicts_dropped"]
    for res in results:
        for score in res.scores:
            chosen = score.source_workload_id == res.chosen_source
            lines.append(
                f"{res.target_id},{score.source_workload_id},"
                f"{format(score.score, '.17g')},{int(chosen)},"
                f"{res.conflicts_dropped if chosen else ''}"
            )
    return "\n".join(lines) + "\n"
