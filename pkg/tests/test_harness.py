import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from src.config import HyperParams
from src.engine import run_session, stream_digest
from src.errors import RangeViolationError, RejectionFailureError
from src.harness import (
    SyntheticSpec,
    ablation_grid,
    generate_stream,
    run_ablation,
    run_sweep,
    sample_class_means,
    tail_retention,
    zipf_probabilities,
)

GOLDEN = Path(__file__).parent / "data" / "golden.json"

NOISELESS = SyntheticSpec(
    n_classes=5,
    dim=8,
    n_samples=120,
    n_views=3,
    intra_class_noise=0.0,
    view_jitter=0.0,
    textual_offset_noise=0.0,
    seed=4,
)


# --------------------------------------------------
# GENERATION
# --------------------------------------------------


def test_generate_stream_is_a_pure_function_of_the_spec():
    spec = SyntheticSpec(n_classes=6, dim=8, n_samples=50, n_views=3, seed=9)
    a, b = generate_stream(spec), generate_stream(spec)

    assert stream_digest(a.records) == stream_digest(b.records)
    assert np.array_equal(a.textual, b.textual)
    assert stream_digest(generate_stream(replace(spec, seed=10)).records) != stream_digest(
        a.records
    )


def test_generated_views_are_unit_and_view_zero_is_the_sample():
    spec = SyntheticSpec(n_classes=4, dim=6, n_samples=20, n_views=5, seed=1)
    stream = generate_stream(spec)

    for record in stream.records:
        assert record.views.shape == (5, 6)
        assert np.linalg.norm(record.views, axis=1) == pytest.approx(np.ones(5))
    assert np.linalg.norm(stream.textual, axis=1) == pytest.approx(np.ones(4))


def test_class_means_respect_the_minimum_angle():
    rng = np.random.default_rng(0)
    means = sample_class_means(rng, 10, 16, 40.0)
    cos = means @ means.T
    np.fill_diagonal(cos, -1.0)
    assert cos.max() < math.cos(math.radians(40.0))


def test_impossible_angle_fails_loudly():
    with pytest.raises(RejectionFailureError):
        sample_class_means(np.random.default_rng(0), 5, 2, 100.0)


def test_synthetic_spec_validation():
    with pytest.raises(RangeViolationError, match="n_classes"):
        SyntheticSpec(n_classes=1).validate()
    with pytest.raises(RangeViolationError, match="view_jitter"):
        SyntheticSpec(view_jitter=-0.1).validate()


def test_uniform_zipf_gives_uniform_frequencies():
    spec = SyntheticSpec(n_classes=10, dim=8, n_samples=10_000, n_views=1, zipf_exponent=0.0)
    stream = generate_stream(spec)
    counts = np.bincount([r.true_label for r in stream.records], minlength=10)

    # five binomial standard deviations
    tolerance = 5 * math.sqrt(10_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 1000) < tolerance)


def test_zipf_tail_mass():
    p = zipf_probabilities(20, 1.5)
    assert p.sum() == pytest.approx(1.0)
    assert np.sort(p)[:4].sum() < 0.05


def test_zipf_labels_track_the_class_mass():
    spec = SyntheticSpec(n_classes=20, dim=32, n_samples=10_000, n_views=1)
    stream = generate_stream(spec)
    counts = np.bincount([r.true_label for r in stream.records], minlength=20)

    total_variation = 0.5 * np.abs(counts / counts.sum() - stream.class_probs).sum()
    assert total_variation < 0.05


def test_noiseless_stream_is_perfectly_classified():
    stream = generate_stream(NOISELESS)
    for record in stream.records:
        assert np.allclose(record.views, stream.class_means[record.true_label])

    report = run_session(stream.records, HyperParams(n_views=3), stream.textual)
    assert report.summary["accuracy"] == 1.0
    assert report.summary["zero_shot_accuracy"] == 1.0


# --------------------------------------------------
# ABLATION
# --------------------------------------------------


def test_ablation_grid_switches_modules_off():
    grid = ablation_grid(HyperParams())
    assert list(grid) == ["full", "capc_only", "ncl_only", "baseline"]

    assert grid["capc_only"].lambda2 == 0.0
    assert grid["ncl_only"].gamma == 0.0 and grid["ncl_only"].delta == 0.0
    assert grid["ncl_only"].lambda2 == HyperParams().lambda2
    assert grid["baseline"].lambda2 == 0.0 and grid["baseline"].gamma == 0.0


def test_noiseless_ablation_hits_the_ceiling():
    report = run_ablation(NOISELESS, n_seeds=2, progress=False)

    assert set(report.runs["config"]) == {"full", "capc_only", "ncl_only", "baseline"}
    assert (report.runs["accuracy"] == 1.0).all()


def test_ablation_runs_are_paired_by_seed():
    spec = SyntheticSpec(n_classes=6, dim=8, n_samples=80, n_views=3, seed=2)
    report = run_ablation(spec, n_seeds=2, progress=False)

    assert len(report.runs) == 8
    for _, group in report.runs.groupby("seed"):
        assert group["stream_digest"].nunique() == 1
    assert sorted(report.runs["seed"].unique()) == [2, 3]
    assert "accuracy_mean" in report.summary.columns
    assert "tail_retention_std" in report.summary.columns


def test_tail_retention_examples():
    cache = [{"class_id": c, "entries": e} for c, e in enumerate([3, 1, 0, 2])]
    assert tail_retention({"summary": {"tail_classes": [1, 3]}, "cache": cache}) == 1.0
    assert tail_retention({"summary": {"tail_classes": [2]}, "cache": cache}) == 0.0


def test_sweep_reports_one_row_per_value():
    spec = SyntheticSpec(n_classes=6, dim=8, n_samples=60, n_views=3, seed=0)
    table = run_sweep(spec, HyperParams(n_views=3), "gamma", [0, 1.0, 2], n_seeds=1, progress=False)

    assert table["gamma"].tolist() == [0, 1.0, 2]
    assert "accuracy_mean" in table.columns


def test_sweep_rejects_unknown_knobs():
    with pytest.raises(RangeViolationError, match="knob"):
        run_sweep(NOISELESS, HyperParams(), "seed", [1, 2])


def test_default_session_matches_the_committed_values():
    golden = json.loads(GOLDEN.read_text())["default_session"]
    stream = generate_stream(SyntheticSpec(seed=golden["seed"]))
    summary = run_session(stream.records, HyperParams(), stream.textual).summary

    assert summary["accuracy"] == pytest.approx(golden["accuracy"], abs=1e-9)
    assert summary["zero_shot_accuracy"] == pytest.approx(golden["zero_shot_accuracy"], abs=1e-9)
    assert summary["outcomes"] == golden["outcomes"]


def test_default_spec_ablation_ordering():
    golden = json.loads(GOLDEN.read_text())["default_ablation"]
    report = run_ablation(SyntheticSpec(), n_seeds=golden["n_seeds"], progress=False)
    acc = report.summary.set_index("config")["accuracy_mean"]
    for config, value in golden["accuracy_mean"].items():
        assert acc[config] == pytest.approx(value, abs=1e-6)

    assert acc["full"] >= acc["capc_only"] >= acc["baseline"]
    assert acc["full"] >= acc["ncl_only"] >= acc["baseline"]
    assert acc["full"] - acc["baseline"] >= 0.005

    retention = report.summary.set_index("config")["tail_retention_mean"]
    tail_acc = report.summary.set_index("config")["tail_accuracy_mean"]
    assert retention["full"] >= retention["baseline"]
    assert tail_acc["full"] >= tail_acc["baseline"]
