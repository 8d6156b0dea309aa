import json

import numpy as np
import pytest

from data.stream_writer import write_prototypes
from main import main
from src.parsing import load_report

SYNTHETIC_FLAGS = ["--classes", "4", "--dim", "6", "--samples", "40", "--views", "3"]


@pytest.fixture
def generated(tmp_path):
    assert main(["generate", *SYNTHETIC_FLAGS, "--out-dir", str(tmp_path), "--name", "tiny"]) == 0
    return tmp_path / "tiny-stream.jsonl", tmp_path / "tiny-prototypes.jsonl"


def test_generate_then_run(generated, tmp_path, capsys):
    stream, protos = generated
    out = tmp_path / "report.jsonl"

    code = main(["run", "--stream", str(stream), "--prototypes", str(protos), "--out", str(out)])
    assert code == 0
    assert "accuracy" in capsys.readouterr().out

    report = load_report(out)
    assert report["summary"]["n_samples"] == 40
    assert report["config"]["stream"]["file"] == "tiny-stream.jsonl"
    assert len(report["config"]["prototypes"]["sha256"]) == 64


def test_run_twice_is_byte_identical(generated, tmp_path):
    stream, protos = generated
    outs = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for out in outs:
        main(["run", "--stream", str(stream), "--prototypes", str(protos), "--out", str(out)])
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_run_with_mismatched_dimension(generated, tmp_path, capsys):
    stream, _ = generated
    wrong = tmp_path / "wrong.jsonl"
    write_prototypes(wrong, np.eye(4, 5))

    code = main(["run", "--stream", str(stream), "--prototypes", str(wrong)])
    assert code != 0
    assert capsys.readouterr().err.startswith("error DimensionMismatch:")


def test_run_with_config_and_overrides(generated, tmp_path):
    stream, protos = generated
    config = tmp_path / "c.yaml"
    config.write_text("gamma: 2\nlambda2: 0.0\n", encoding="utf-8")
    out = tmp_path / "r.jsonl"

    code = main(
        [
            "run",
            "--stream", str(stream),
            "--prototypes", str(protos),
            "--config", str(config),
            "--set", "gamma=1",
            "--out", str(out),
            "--no-samples",
        ]
    )
    assert code == 0
    report = load_report(out)
    assert report["config"]["params"]["gamma"] == 1.0
    assert report["config"]["params"]["lambda2"] == 0.0
    assert report["samples"] == []


def test_unknown_override_is_an_error(generated, capsys):
    stream, protos = generated
    code = main(
        ["run", "--stream", str(stream), "--prototypes", str(protos), "--set", "gama=1"]
    )
    assert code == 2
    assert "error UnknownKey: unknown config key 'gama'" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    code = main(["inspect-cache", str(tmp_path / "nope.jsonl")])
    assert code == 2
    assert capsys.readouterr().err.startswith("error FileNotFound:")


def test_inspect_cache(generated, tmp_path, capsys):
    stream, protos = generated
    out = tmp_path / "report.jsonl"
    main(["run", "--stream", str(stream), "--prototypes", str(protos), "--out", str(out)])
    capsys.readouterr()

    assert main(["inspect-cache", str(out)]) == 0
    text = capsys.readouterr().out
    assert "activation_count" in text
    assert "dead classes" in text.lower()


def test_ablate_reports_all_four_configs(tmp_path):
    code = main(
        ["ablate", *SYNTHETIC_FLAGS, "--seeds", "1", "--no-progress", "--out-dir", str(tmp_path)]
    )
    assert code == 0

    body = json.loads((tmp_path / "ablation.json").read_text(encoding="utf-8"))
    assert {row["config"] for row in body["summary"]} == {
        "full",
        "capc_only",
        "ncl_only",
        "baseline",
    }
    assert (tmp_path / "ablation-runs.csv").exists()
    assert (tmp_path / "ablation-summary.csv").exists()


def test_sweep_writes_a_table(tmp_path):
    code = main(
        [
            "sweep", *SYNTHETIC_FLAGS,
            "--knob", "lambda2",
            "--values", "0,0.5",
            "--seeds", "1",
            "--no-progress",
            "--out-dir", str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "sweep-lambda2.csv").exists()


def test_params_lists_every_knob(capsys):
    assert main(["params"]) == 0
    out = capsys.readouterr().out
    assert "ncl_refresh_stride" in out
    assert "entropy_gate" in out


def test_empty_generated_stream_still_runs(tmp_path, capsys):
    flags = ["--classes", "4", "--dim", "6", "--samples", "0", "--views", "3"]
    assert main(["generate", *flags, "--out-dir", str(tmp_path), "--name", "empty"]) == 0

    out = tmp_path / "report.jsonl"
    code = main(
        [
            "run",
            "--stream", str(tmp_path / "empty-stream.jsonl"),
            "--prototypes", str(tmp_path / "empty-prototypes.jsonl"),
            "--out", str(out),
        ]
    )
    assert code == 0, capsys.readouterr().err
    assert load_report(out)["summary"]["n_samples"] == 0
