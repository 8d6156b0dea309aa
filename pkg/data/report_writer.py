import json
import logging
import math
from enum import Enum
from pathlib import Path

import numpy as np

from data.stream_writer import SIGNIFICANT_DIGITS
from src.config import FORMAT_VERSION
from src.engine import SessionReport

logger = logging.getLogger(__name__)


def plain(value):
    """JSON-ready copy: numpy → python, floats to 9 significant digits."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return value
        return float(format(value, f".{SIGNIFICANT_DIGITS}g"))
    return value


def _dump(record: str, body: dict) -> str:
    return json.dumps({"record": record} | plain(body), sort_keys=True)


def report_lines(report: SessionReport, include_samples: bool = True) -> list[str]:
    lines = [_dump("config", {"format_version": FORMAT_VERSION} | report.config)]
    if include_samples:
        lines.extend(_dump("sample", r.to_dict()) for r in report.records)
    lines.extend(_dump("class", row) for row in report.cache)
    lines.extend(_dump("negative", row) for row in report.negatives)
    lines.append(_dump("summary", report.summary))
    return lines


def write_session_report(
    path: Path | str,
    report: SessionReport,
    include_samples: bool = True,
):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(report_lines(report, include_samples)) + "\n", encoding="utf-8")
    logger.info("report written to %s", path)
