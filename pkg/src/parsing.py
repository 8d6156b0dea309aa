import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from src.config import FORMAT_VERSION
from src.engine import StreamRecord
from src.errors import (
    DimensionMismatchError,
    ParseError,
    UnknownClassError,
    ViewCountMismatchError,
)

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-4


def file_digest(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parse_line(text: str, line: int) -> dict:
    """
    One JSON object per line; errors carry the line number.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line=line) from exc
    if not isinstance(obj, dict) or "record" not in obj:
        raise ParseError("expected an object with a 'record' field", line=line)
    return obj


def parse_vectors(rows, d: int, line: int, what: str) -> np.ndarray:
    """Rows of d numbers, stored as float32 and computed on as float64."""
    try:
        lengths = {len(row) for row in rows}
    except TypeError as exc:
        raise ParseError(f"{what} must be nested arrays of numbers", line=line) from exc

    bad = sorted(n for n in lengths if n != d)
    if bad:
        raise DimensionMismatchError(
            f"line {line}: {what} has {bad[0]} coordinates, header says d={d}"
        )

    try:
        values = np.asarray(rows, dtype=np.float32).astype(np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what} contains non-numeric values", line=line) from exc

    if not np.all(np.isfinite(values)):
        raise ParseError(f"{what} contains non-finite values", line=line)
    return values.reshape(len(rows), d)


def ensure_unit_rows(values: np.ndarray, line: int, what: str) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1)
    off = np.abs(norms - 1.0) > UNIT_TOLERANCE
    if off.any():
        if np.any(norms < 1e-12):
            raise ParseError(f"{what} contains a zero vector", line=line)
        logger.warning(
            "line %d: %s had %d row(s) off unit norm; renormalized",
            line,
            what,
            int(off.sum()),
        )
        values = values.copy()
        values[off] = values[off] / norms[off, None]
    return values


def _read_header(lines: list[str], path: Path, required: tuple[str, ...]) -> dict:
    if not lines:
        raise ParseError(f"{path}: empty file, expected a header", line=1)

    header = parse_line(lines[0], 1)
    if header["record"] != "header":
        raise ParseError("first record must be the header", line=1)

    for key in required:
        if not isinstance(header.get(key), int) or header[key] < 1:
            raise ParseError(f"header field '{key}' must be a positive integer", line=1)

    version = header.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version}", line=1)
    return header


def load_stream(path: Path | str) -> tuple[list[StreamRecord], dict]:
    """Validated records in file order, plus the header."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = _read_header(lines, path, ("d", "C", "n_views"))
    d, C, n_views = header["d"], header["C"], header["n_views"]

    records = []
    for number, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        obj = parse_line(text, number)
        if obj["record"] != "sample":
            raise ParseError(f"unexpected record type '{obj['record']}'", line=number)

        views = obj.get("views")
        if not isinstance(views, list):
            raise ParseError("sample is missing its 'views' array", line=number)
        if len(views) != n_views:
            raise ViewCountMismatchError(
                f"line {number}: {len(views)} views, header says n_views={n_views}"
            )
        views = ensure_unit_rows(
            parse_vectors(views, d, number, "views"), number, "views"
        )

        label = obj.get("true_label")
        if label is not None and (not isinstance(label, int) or not 0 <= label < C):
            raise UnknownClassError(f"line {number}: true_label {label!r} outside [0, {C})")

        records.append(
            StreamRecord(
                sample_id=int(obj.get("sample_id", len(records))),
                views=views,
                true_label=label,
            )
        )

    return records, header


def load_prototypes(path: Path | str) -> np.ndarray:
    """(C, d) initial textual prototypes; row c is class c."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = _read_header(lines, path, ("d", "C"))
    d, C = header["d"], header["C"]

    rows: dict[int, list] = {}
    for number, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        obj = parse_line(text, number)
        if obj["record"] != "prototype":
            raise ParseError(f"unexpected record type '{obj['record']}'", line=number)
        class_id = obj.get("class_id", len(rows))
        if not isinstance(class_id, int) or not 0 <= class_id < C or class_id in rows:
            raise ParseError(f"bad or duplicate class_id {class_id!r}", line=number)
        values = obj.get("values")
        if not isinstance(values, list):
            raise ParseError("prototype is missing its 'values' array", line=number)
        rows[class_id] = ensure_unit_rows(
            parse_vectors([values], d, number, f"prototype {class_id}"),
            number,
            f"prototype {class_id}",
        )[0]

    if len(rows) != C:
        raise ParseError(f"{path}: header says C={C}, found {len(rows)} prototypes")

    return np.stack([rows[c] for c in range(C)])


def load_report(path: Path | str) -> dict:
    """Session report back into plain dicts, grouped by record type."""
    path = Path(path)
    report = {"config": None, "samples": [], "cache": [], "negatives": [], "summary": None}

    for number, text in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not text.strip():
            continue
        obj = parse_line(text, number)
        kind = obj.pop("record")
        if kind == "config":
            report["config"] = obj
        elif kind == "sample":
            report["samples"].append(obj)
        elif kind == "class":
            report["cache"].append(obj)
        elif kind == "negative":
            report["negatives"].append(obj)
        elif kind == "summary":
            report["summary"] = obj
        else:
            raise ParseError(f"unexpected record type '{kind}'", line=number)

    if report["config"] is None or report["summary"] is None:
        raise ParseError(f"{path}: report needs a config and a summary record")
    return report
