"""Post-run analysis: reactivation statistics and metric plots.

A "switch" is a change of task_index between consecutive probe records.
The record where the old task ends is the switch step; the first record
of the new task carries the first cross-boundary measurements (its
velocity covers the first new-task iterations), so spike and drop are
evaluated from that record onward.

Detector thresholds are declared constants: the pre-switch window
defaults to one epoch of probe steps (passed by the caller; the full
pre-switch segment if omitted) and the recovery tolerance defaults to 5%
of the pre-switch baseline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
from scipy.stats import rankdata

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .errors import DataError, UsageError  # noqa: E402
from .metrics_io import METRIC_COLUMNS, MetricRecord, read_metrics_csv  # noqa: E402

__all__ = [
    "ReactivationStats",
    "TrendReport",
    "reactivation_stats",
    "similarity_trend",
    "spearman",
    "plot_metrics",
    "stats_mapping",
    "DEFAULT_RECOVERY_FRACTION",
    "PLOTTABLE_METRICS",
]

log = logging.getLogger(__name__)

DEFAULT_RECOVERY_FRACTION = 0.05

PLOTTABLE_METRICS = tuple(
    c for c in METRIC_COLUMNS if c not in ("global_step", "task_index", "iteration")
)

# Deterministic vector output: fixed hash salt and no embedded timestamps.
matplotlib.rcParams["svg.hashsalt"] = "ntklab"


@dataclass(frozen=True)
class ReactivationStats:
    """Quantified kernel disruption at one task switch."""

    switch_step: int  # global_step of the last record of the old task
    task_before: int
    task_after: int
    window: int  # pre-switch records used for the baseline
    pre_switch_baseline: float  # median lambda_max over that window
    drop_depth: float  # baseline - min post-switch lambda_max (signed)
    recovery_steps: int | None  # post-switch records until lambda_max recovers
    recovery_tolerance: float
    velocity_spike_ratio: float | None  # v(first post-switch) / median pre v
    peak_post_velocity: float | None
    peak_distance_jump: float  # max kernel_distance_from_prev post-switch
    partial: bool  # fewer post-switch records than the window wanted

    @property
    def recovered(self) -> bool:
        return self.recovery_steps is not None


@dataclass(frozen=True)
class TrendReport:
    """Rank correlations of reactivation magnitude against task similarity."""

    num_levels: int
    drop_depth_correlation: float
    distance_jump_correlation: float


def _switch_indices(records: list[MetricRecord]) -> list[int]:
    return [
        i
        for i in range(len(records) - 1)
        if records[i + 1].task_index != records[i].task_index
    ]


def _spike_ratio(spike: float | None, base: float) -> float | None:
    if spike is None:
        return None
    if base == 0.0:
        return 1.0 if spike == 0.0 else math.inf
    return spike / base


def reactivation_stats(
    records: list[MetricRecord],
    window: int | None = None,
    recovery_tolerance: float | None = None,
) -> list[ReactivationStats]:
    """One ReactivationStats per task switch found in the record stream.

    ``window`` is the number of probe records for both the pre-switch
    baseline and the post-switch drop search (None: the full segment on
    each side).  ``recovery_tolerance`` is an absolute lambda_max margin
    (None: 5% of the baseline).  Recovery is searched over the whole
    post-switch segment regardless of the window.
    """
    if window is not None and window < 1:
        raise UsageError("window must be a positive number of probe records")
    switches = _switch_indices(records)
    if not switches:
        raise UsageError("records contain no task switch")
    stats = []
    segment_starts = [0] + [i + 1 for i in switches]
    for k, boundary in enumerate(switches):
        seg_start = segment_starts[k]
        pre = records[seg_start : boundary + 1]
        w = len(pre) if window is None else min(window, len(pre))
        pre_window = pre[len(pre) - w :]
        baseline = float(np.median([r.lambda_max for r in pre_window]))
        tol = (
            DEFAULT_RECOVERY_FRACTION * baseline
            if recovery_tolerance is None
            else recovery_tolerance
        )

        seg_end = switches[k + 1] if k + 1 < len(switches) else len(records) - 1
        post = records[boundary + 1 : seg_end + 1]
        if not post:
            raise UsageError(
                f"no post-switch records after step {records[boundary].global_step}"
            )
        drop_span = post if window is None else post[:window]
        partial = window is not None and len(post) < window
        if partial:
            log.warning(
                "switch at step %d has only %d post-switch records "
                "(window %d); stats are partial",
                records[boundary].global_step, len(post), window,
            )

        drop_depth = baseline - min(r.lambda_max for r in drop_span)
        recovery_steps = None
        for j, rec in enumerate(post, start=1):
            if rec.lambda_max >= baseline - tol:
                recovery_steps = j
                break

        pre_velocities = [r.velocity for r in pre_window if r.velocity is not None]
        base_velocity = float(np.median(pre_velocities)) if pre_velocities else 0.0
        post_velocities = [r.velocity for r in drop_span if r.velocity is not None]
        stats.append(
            ReactivationStats(
                switch_step=records[boundary].global_step,
                task_before=records[boundary].task_index,
                task_after=records[boundary + 1].task_index,
                window=w,
                pre_switch_baseline=baseline,
                drop_depth=drop_depth,
                recovery_steps=recovery_steps,
                recovery_tolerance=tol,
                velocity_spike_ratio=_spike_ratio(post[0].velocity, base_velocity),
                peak_post_velocity=max(post_velocities) if post_velocities else None,
                peak_distance_jump=max(r.kernel_distance_from_prev for r in drop_span),
                partial=partial,
            )
        )
    return stats


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks for ties; 0 if either side has
    no rank variance (a flat response cannot support a trend claim)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise UsageError("spearman needs two equal-length vectors")
    if xs.size < 2:
        raise UsageError("spearman needs at least 2 points")
    rx = rankdata(xs, method="average")
    ry = rankdata(ys, method="average")
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))


def similarity_trend(
    pairs: list[tuple[float, ReactivationStats]],
) -> TrendReport:
    """Rank correlation between task similarity and disruption magnitude.

    Expects one (similarity, stats) pair per shift level, at least 4
    levels.  Negative correlations mean more similar tasks are disrupted
    less, the expected direction for the window family.
    """
    if len(pairs) < 4:
        raise UsageError(f"need at least 4 similarity levels, got {len(pairs)}")
    sims = [s for s, _ in pairs]
    if len(set(sims)) < 4:
        raise UsageError("need at least 4 distinct similarity levels")
    drops = [st.drop_depth for _, st in pairs]
    jumps = [st.peak_distance_jump for _, st in pairs]
    return TrendReport(
        num_levels=len(pairs),
        drop_depth_correlation=spearman(sims, drops),
        distance_jump_correlation=spearman(sims, jumps),
    )


def stats_mapping(stats: list[ReactivationStats]) -> dict[str, object]:
    """Flatten per-switch stats into `key = value` form for persistence."""
    out: dict[str, object] = {"switches": len(stats)}
    for i, st in enumerate(stats):
        prefix = f"switch{i}_"
        out[prefix + "step"] = st.switch_step
        out[prefix + "task_before"] = st.task_before
        out[prefix + "task_after"] = st.task_after
        out[prefix + "window"] = st.window
        out[prefix + "baseline"] = format(st.pre_switch_baseline, ".17g")
        out[prefix + "drop_depth"] = format(st.drop_depth, ".17g")
        out[prefix + "recovery_steps"] = (
            "unrecovered" if st.recovery_steps is None else st.recovery_steps
        )
        out[prefix + "recovery_tolerance"] = format(st.recovery_tolerance, ".17g")
        out[prefix + "velocity_spike_ratio"] = (
            "" if st.velocity_spike_ratio is None
            else format(st.velocity_spike_ratio, ".17g")
        )
        out[prefix + "peak_post_velocity"] = (
            "" if st.peak_post_velocity is None
            else format(st.peak_post_velocity, ".17g")
        )
        out[prefix + "peak_distance_jump"] = format(st.peak_distance_jump, ".17g")
        out[prefix + "partial"] = "true" if st.partial else "false"
    return out


# --- plotting ----------------------------------------------------------------


def _derive_labels(paths: list[Path]) -> list[str]:
    parents = [p.resolve().parent.name for p in paths]
    if len(set(parents)) == len(paths):
        return parents
    stems = [p.stem for p in paths]
    if len(set(stems)) == len(paths):
        return stems
    return [str(p) for p in paths]


def plot_metrics(
    csv_paths,
    metric: str,
    out_path: str | Path,
    labels: list[str] | None = None,
) -> Path:
    """One curve per CSV with task-switch markers; deterministic vector file.

    The metric must be one of the plottable columns; step-index columns
    are the x axis, not curves.  Empty CSVs are an error.
    """
    if metric not in PLOTTABLE_METRICS:
        raise UsageError(
            f"unknown metric {metric!r}; choose one of {', '.join(PLOTTABLE_METRICS)}"
        )
    paths = [Path(p) for p in csv_paths]
    if not paths:
        raise UsageError("need at least one metrics CSV")
    if labels is not None and len(labels) != len(paths):
        raise UsageError("labels must match the number of CSV paths")
    names = labels if labels is not None else _derive_labels(paths)

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    try:
        boundaries: set[int] = set()
        for path, name in zip(paths, names):
            records = read_metrics_csv(path)
            if not records:
                raise DataError(f"{path}: no metric rows to plot")
            xs = [r.global_step for r in records if getattr(r, metric) is not None]
            ys = [getattr(r, metric) for r in records if getattr(r, metric) is not None]
            if not xs:
                raise DataError(f"{path}: metric {metric!r} has no defined values")
            ax.plot(xs, ys, label=name, linewidth=1.5)
            boundaries.update(
                records[i].global_step for i in _switch_indices(records)
            )
        for step in sorted(boundaries):
            ax.axvline(step, color="0.5", linestyle="--", linewidth=1.0)
        ax.set_xlabel("probe step")
        ax.set_ylabel(metric)
        if len(paths) > 1 or labels is not None:
            ax.legend()
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        suffix = out_path.suffix.lower()
        if suffix == ".svg":
            fig.savefig(out_path, format="svg", metadata={"Date": None})
        elif suffix == ".pdf":
            fig.savefig(out_path, format="pdf",
                        metadata={"CreationDate": None})
        else:
            raise UsageError(
                f"unsupported plot format {suffix!r}; use .svg or .pdf"
            )
    finally:
        plt.close(fig)
    return out_path
