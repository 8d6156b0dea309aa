"""
Desk-scale experiments: seeded long-tailed synthetic embedding streams,
the four-way module ablation, and hyperparameter sensitivity sweeps.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.config import HyperParams, coerce_value
from src.engine import SessionReport, StreamRecord, run_session, stream_digest
from src.errors import RejectionFailureError, RangeViolationError
from src.numerics import normalize, normalize_rows

logger = logging.getLogger(__name__)

MAX_REJECTION_ATTEMPTS = 10_000

METRICS = (
    "accuracy",
    "zero_shot_accuracy",
    "tail_accuracy",
    "tail_retention",
    "dead_classes",
)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Noise scales are per-coordinate standard deviations.
    """

    n_classes: int = 20
    dim: int = 32
    zipf_exponent: float = 1.5
    intra_class_noise: float = 0.35
    view_jitter: float = 0.1
    n_samples: int = 2000
    textual_offset_noise: float = 0.15
    n_views: int = 8
    min_angle_deg: float = 25.0
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if self.n_classes < 2:
            raise RangeViolationError("n_classes", "must be >= 2")
        if self.dim < 2:
            raise RangeViolationError("dim", "must be >= 2")
        if self.zipf_exponent < 0:
            raise RangeViolationError("zipf_exponent", "must be >= 0")
        if self.n_views < 1:
            raise RangeViolationError("n_views", "must be >= 1")
        if self.n_samples < 0:
            raise RangeViolationError("n_samples", "must be >= 0")
        for key in ("intra_class_noise", "view_jitter", "textual_offset_noise"):
            if getattr(self, key) < 0:
                raise RangeViolationError(key, "must be >= 0")
        return self


@dataclass
class SyntheticStream:
    records: list[StreamRecord]
    textual: np.ndarray
    class_means: np.ndarray
    class_probs: np.ndarray


@dataclass
class AblationReport:
    runs: pd.DataFrame
    summary: pd.DataFrame


# --------------------------------------------------
# GENERATION
# --------------------------------------------------


def zipf_probabilities(n_classes: int, exponent: float) -> np.ndarray:
    """Normalized Zipf mass by frequency rank (rank 0 is the head)."""
    weights = np.arange(1, n_classes + 1, dtype=np.float64) ** -exponent
    return weights / weights.sum()


def sample_class_means(
    rng: np.random.Generator,
    n_classes: int,
    dim: int,
    min_angle_deg: float,
) -> np.ndarray:
    max_cos = math.cos(math.radians(min_angle_deg))
    means: list[np.ndarray] = []

    for c in range(n_classes):
        for _ in range(MAX_REJECTION_ATTEMPTS):
            candidate = normalize(rng.standard_normal(dim))
            if all(float(candidate @ m) < max_cos for m in means):
                means.append(candidate)
                break
        else:
            raise RejectionFailureError(
                f"could not place class {c} at >= {min_angle_deg} deg "
                f"from the others in d={dim}"
            )

    return np.stack(means)


def generate_stream(spec: SyntheticSpec) -> SyntheticStream:
    """Pure function of `spec`: same spec, bitwise-identical stream."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C, d = spec.n_classes, spec.dim

    means = sample_class_means(rng, C, d, spec.min_angle_deg)

    # Frequency ranks are shuffled so head classes are not always low indices.
    ranks = rng.permutation(C)
    class_probs = zipf_probabilities(C, spec.zipf_exponent)[ranks]
    labels = rng.choice(C, size=spec.n_samples, p=class_probs)

    records = []
    for i, label in enumerate(labels):
        sample = normalize(means[label] + spec.intra_class_noise * rng.standard_normal(d))
        jitter = spec.view_jitter * rng.standard_normal((spec.n_views - 1, d))
        views = np.vstack([sample, normalize_rows(sample[None, :] + jitter)])
        records.append(StreamRecord(sample_id=i, views=views, true_label=int(label)))

    textual = normalize_rows(means + spec.textual_offset_noise * rng.standard_normal((C, d)))

    return SyntheticStream(
        records=records,
        textual=textual,
        class_means=means,
        class_probs=class_probs,
    )


# --------------------------------------------------
# ABLATION
# --------------------------------------------------


def ablation_grid(base: HyperParams) -> dict[str, HyperParams]:
    """Both modules on, each alone, and neither."""
    capc_off = {"gamma": 0.0, "delta": 0.0}
    ncl_off = {"lambda2": 0.0}
    return {
        "full": base,
        "capc_only": base.with_overrides(**ncl_off),
        "ncl_only": base.with_overrides(**capc_off),
        "baseline": base.with_overrides(**capc_off, **ncl_off),
    }


def tail_retention(report: SessionReport | dict) -> float:
    """Fraction of bottom-quintile classes holding at least one cache entry."""
    if isinstance(report, SessionReport):
        summary, cache = report.summary, report.cache
    else:
        summary, cache = report["summary"], report["cache"]

    tail = summary.get("tail_classes")
    if not tail:
        raise ValueError("tail retention needs a labeled stream")
    entries = {row["class_id"]: row["entries"] for row in cache}
    return float(np.mean([entries[c] > 0 for c in tail]))


def _session_row(report: SessionReport) -> dict:
    summary = report.summary
    return {
        "accuracy": summary["accuracy"],
        "zero_shot_accuracy": summary["zero_shot_accuracy"],
        "tail_accuracy": summary["tail_accuracy"],
        "tail_retention": tail_retention(report),
        "dead_classes": summary["dead_classes"],
    }


def _summarize_runs(runs: pd.DataFrame, by: str) -> pd.DataFrame:
    grouped = runs.groupby(by, sort=False)[list(METRICS)]
    summary = grouped.agg(["mean", "std"])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    return summary.reset_index()


def run_ablation(
    spec: SyntheticSpec,
    grid: dict[str, HyperParams] | None = None,
    n_seeds: int = 5,
    *,
    base: HyperParams | None = None,
    progress: bool = True,
) -> AblationReport:
    """
    Every config sees the same stream for a given seed (paired comparison).
    """
    if n_seeds < 1:
        raise RangeViolationError("n_seeds", "must be >= 1")
    if grid is None:
        grid = ablation_grid(base or HyperParams(n_views=spec.n_views))

    rows = []
    with tqdm(total=n_seeds * len(grid), disable=not progress, desc="ablation") as bar:
        for i in range(n_seeds):
            seed = spec.seed + i
            stream = generate_stream(replace(spec, seed=seed))
            digest = stream_digest(stream.records)

            for name, params in grid.items():
                report = run_session(
                    stream.records, replace(params, seed=seed), stream.textual
                )
                rows.append(
                    {"config": name, "seed": seed, "stream_digest": digest}
                    | _session_row(report)
                )
                bar.update(1)

    runs = pd.DataFrame(rows).astype({metric: float for metric in METRICS})
    summary = _summarize_runs(runs, "config")
    logger.info("ablation done: %d configs x %d seeds", len(grid), n_seeds)
    return AblationReport(runs=runs, summary=summary)


# --------------------------------------------------
# SENSITIVITY SWEEP
# --------------------------------------------------

SWEEPABLE = ("gamma", "lambda2", "ncl_refresh_stride", "lambda1", "eta", "delta")


def run_sweep(
    spec: SyntheticSpec,
    base: HyperParams,
    knob: str,
    values: list,
    n_seeds: int = 3,
    *,
    progress: bool = True,
) -> pd.DataFrame:
    """Mean and stdev of the session metrics for every value of one knob."""
    if knob not in SWEEPABLE:
        raise RangeViolationError("knob", f"must be one of {', '.join(SWEEPABLE)}")

    grid = {
        value: base.with_overrides(**{knob: coerce_value(knob, value)})
        for value in values
    }
    report = run_ablation(spec, grid, n_seeds, progress=progress)
    summary = report.summary.rename(columns={"config": knob})
    return summary
