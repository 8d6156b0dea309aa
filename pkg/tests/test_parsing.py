import json
import logging

import numpy as np
import pytest

from data.report_writer import plain, report_lines, write_session_report
from data.stream_writer import storage_value, write_prototypes, write_stream
from src.config import HyperParams
from src.engine import StreamRecord, run_session
from src.errors import (
    DimensionMismatchError,
    ParseError,
    UnknownClassError,
    ViewCountMismatchError,
)
from src.harness import SyntheticSpec, generate_stream
from src.parsing import file_digest, load_prototypes, load_report, load_stream

SPEC = SyntheticSpec(n_classes=4, dim=6, n_samples=30, n_views=3, seed=5)


def header(**fields) -> str:
    return json.dumps({"record": "header", "format_version": 1} | fields)


def sample_line(views, label=None, sample_id=0) -> str:
    return json.dumps(
        {"record": "sample", "sample_id": sample_id, "views": views, "true_label": label}
    )


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# --------------------------------------------------
# STREAMS
# --------------------------------------------------


def test_two_record_stream_keeps_order(tmp_path):
    path = write_lines(
        tmp_path / "s.jsonl",
        [
            header(d=2, C=2, n_views=1),
            sample_line([[1.0, 0.0]], 0, sample_id=7),
            sample_line([[0.0, 1.0]], None, sample_id=3),
        ],
    )
    records, head = load_stream(path)

    assert head["C"] == 2
    assert [r.sample_id for r in records] == [7, 3]
    assert [r.true_label for r in records] == [0, None]
    assert records[1].views.tolist() == [[0.0, 1.0]]


def test_short_vector_names_the_line(tmp_path):
    path = write_lines(
        tmp_path / "s.jsonl",
        [
            header(d=3, C=2, n_views=1),
            sample_line([[1.0, 0.0, 0.0]]),
            sample_line([[1.0, 0.0]]),
        ],
    )
    with pytest.raises(DimensionMismatchError, match="line 3"):
        load_stream(path)


def test_view_count_mismatch(tmp_path):
    path = write_lines(
        tmp_path / "s.jsonl",
        [header(d=2, C=2, n_views=2), sample_line([[1.0, 0.0]])],
    )
    with pytest.raises(ViewCountMismatchError, match="line 2"):
        load_stream(path)


def test_label_outside_classes(tmp_path):
    path = write_lines(
        tmp_path / "s.jsonl",
        [header(d=2, C=2, n_views=1), sample_line([[1.0, 0.0]], 2)],
    )
    with pytest.raises(UnknownClassError):
        load_stream(path)


def test_bad_json_is_a_parse_error_with_line(tmp_path):
    path = write_lines(tmp_path / "s.jsonl", [header(d=2, C=2, n_views=1), "{not json"])
    with pytest.raises(ParseError) as exc:
        load_stream(path)
    assert exc.value.line == 2


def test_missing_header(tmp_path):
    path = write_lines(tmp_path / "s.jsonl", [sample_line([[1.0, 0.0]])])
    with pytest.raises(ParseError, match="line 1"):
        load_stream(path)


def test_off_unit_rows_are_renormalized_with_a_warning(tmp_path, caplog):
    path = write_lines(
        tmp_path / "s.jsonl",
        [header(d=2, C=2, n_views=1), sample_line([[3.0, 4.0]])],
    )
    with caplog.at_level(logging.WARNING):
        records, _ = load_stream(path)

    assert records[0].views[0] == pytest.approx([0.6, 0.8])
    assert "renormalized" in caplog.text


def test_stream_round_trip(tmp_path):
    stream = generate_stream(SPEC)
    path = tmp_path / "stream.jsonl"
    write_stream(
        path, stream.records, n_classes=SPEC.n_classes, dim=SPEC.dim, n_views=SPEC.n_views
    )

    records, head = load_stream(path)
    assert head["n_views"] == SPEC.n_views
    assert len(records) == SPEC.n_samples
    for original, loaded in zip(stream.records, records):
        assert loaded.sample_id == original.sample_id
        assert loaded.true_label == original.true_label
        stored = original.views.astype(np.float32).astype(np.float64)
        assert np.array_equal(loaded.views, stored)

    # a second write of what was loaded is byte-identical
    again = tmp_path / "again.jsonl"
    write_stream(
        again, records, n_classes=SPEC.n_classes, dim=SPEC.dim, n_views=SPEC.n_views
    )
    assert again.read_bytes() == path.read_bytes()


def test_storage_value_round_trips_float32():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(200):
        assert np.float32(storage_value(x)) == np.float32(x)


# --------------------------------------------------
# PROTOTYPES
# --------------------------------------------------


def test_prototype_round_trip(tmp_path):
    stream = generate_stream(SPEC)
    path = tmp_path / "protos.jsonl"
    write_prototypes(path, stream.textual)

    loaded = load_prototypes(path)
    assert loaded.shape == (SPEC.n_classes, SPEC.dim)
    assert loaded == pytest.approx(stream.textual, abs=1e-6)


def test_missing_prototype_row(tmp_path):
    path = write_lines(
        tmp_path / "p.jsonl",
        [
            header(d=2, C=2),
            json.dumps({"record": "prototype", "class_id": 0, "values": [1.0, 0.0]}),
        ],
    )
    with pytest.raises(ParseError, match="C=2"):
        load_prototypes(path)


def test_duplicate_prototype_row(tmp_path):
    row = json.dumps({"record": "prototype", "class_id": 0, "values": [1.0, 0.0]})
    path = write_lines(tmp_path / "p.jsonl", [header(d=2, C=2), row, row])
    with pytest.raises(ParseError, match="line 3"):
        load_prototypes(path)


# --------------------------------------------------
# REPORTS
# --------------------------------------------------


def test_plain_rounds_and_converts():
    assert plain(np.float64(0.1234567890123)) == 0.123456789
    assert plain({"a": np.arange(2)}) == {"a": [0, 1]}
    assert plain(np.bool_(True)) is True


def test_reports_are_byte_identical_for_identical_runs(tmp_path):
    stream = generate_stream(SPEC)
    params = HyperParams(n_views=3, seed=1)
    paths = []
    for name in ("a.jsonl", "b.jsonl"):
        report = run_session(stream.records, params, stream.textual, trace_cache=True)
        write_session_report(tmp_path / name, report)
        paths.append(tmp_path / name)

    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_report_round_trip(tmp_path):
    stream = generate_stream(SPEC)
    report = run_session(
        stream.records,
        HyperParams(n_views=3),
        stream.textual,
        config_echo={"stream": {"file": "s.jsonl", "sha256": "0" * 64}},
    )
    path = tmp_path / "report.jsonl"
    write_session_report(path, report)

    loaded = load_report(path)
    assert loaded["config"]["format_version"] == 1
    assert loaded["config"]["stream"]["file"] == "s.jsonl"
    assert loaded["config"]["params"]["tau"] == HyperParams().tau
    assert len(loaded["samples"]) == SPEC.n_samples
    assert [row["class_id"] for row in loaded["cache"]] == list(range(SPEC.n_classes))
    assert loaded["summary"]["n_samples"] == SPEC.n_samples
    assert loaded["samples"][0]["admit_outcome"] == report.records[0].admit_outcome.value


def test_report_without_samples(tmp_path):
    stream = generate_stream(SPEC)
    report = run_session(stream.records, HyperParams(n_views=3), stream.textual)
    lines = report_lines(report, include_samples=False)

    kinds = [json.loads(line)["record"] for line in lines]
    assert "sample" not in kinds
    assert kinds[0] == "config" and kinds[-1] == "summary"


def test_report_without_summary_is_rejected(tmp_path):
    path = write_lines(tmp_path / "r.jsonl", [json.dumps({"record": "config"})])
    with pytest.raises(ParseError, match="summary"):
        load_report(path)


def test_file_digest_is_sha256(tmp_path):
    path = tmp_path / "x.txt"
    path.write_bytes(b"abc")
    assert file_digest(path) == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )


def test_unlabeled_records_survive_a_round_trip(tmp_path):
    records = [StreamRecord(0, np.array([[1.0, 0.0]]))]
    path = tmp_path / "u.jsonl"
    write_stream(path, records, n_classes=2, dim=2, n_views=1)
    loaded, _ = load_stream(path)
    assert loaded[0].true_label is None


def test_empty_stream_keeps_a_loadable_header(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_stream(path, [], n_classes=3, dim=4, n_views=2)

    records, head = load_stream(path)
    assert records == []
    assert (head["d"], head["C"], head["n_views"]) == (4, 3, 2)


def test_writer_rejects_records_that_disagree_with_the_header(tmp_path):
    records = [StreamRecord(0, np.array([[1.0, 0.0]]))]
    with pytest.raises(DimensionMismatchError):
        write_stream(tmp_path / "a.jsonl", records, n_classes=2, dim=3, n_views=1)
    with pytest.raises(ViewCountMismatchError):
        write_stream(tmp_path / "b.jsonl", records, n_classes=2, dim=2, n_views=4)
