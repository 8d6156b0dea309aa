import json
import logging
from pathlib import Path

import numpy as np

from src.config import FORMAT_VERSION
from src.errors import DimensionMismatchError, ViewCountMismatchError

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 9


def storage_value(x: float) -> float:
    """float32 rounding written with 9 significant digits (exact float32 round-trip)."""
    return float(format(np.float32(x), f".{SIGNIFICANT_DIGITS}g"))


def storage_rows(matrix) -> list:
    return [[storage_value(x) for x in row] for row in np.atleast_2d(matrix)]


def _dump(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_stream(
    path: Path | str,
    records,
    *,
    n_classes: int,
    dim: int,
    n_views: int,
    class_names: list[str] | None = None,
):
    """
    Header line, then one line per sample. The header shape is given, not
    read off the records, so an empty stream still gets a loadable header.
    """
    records = list(records)
    for r in records:
        views = np.atleast_2d(r.views)
        if views.shape[1] != dim:
            raise DimensionMismatchError(
                f"sample {r.sample_id}: view dimension {views.shape[1]}, header d={dim}"
            )
        if views.shape[0] != n_views:
            raise ViewCountMismatchError(
                f"sample {r.sample_id}: {views.shape[0]} views, header n_views={n_views}"
            )

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    header = {
        "record": "header",
        "format_version": FORMAT_VERSION,
        "d": int(dim),
        "C": int(n_classes),
        "n_views": int(n_views),
    }
    if class_names is not None:
        header["class_names"] = list(class_names)

    lines = [_dump(header)]
    for r in records:
        lines.append(
            _dump(
                {
                    "record": "sample",
                    "sample_id": int(r.sample_id),
                    "views": storage_rows(r.views),
                    "true_label": None if r.true_label is None else int(r.true_label),
                }
            )
        )

    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote %d samples to %s", len(records), path)


def write_prototypes(path: Path | str, protos):
    protos = np.atleast_2d(protos)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    lines = [
        _dump(
            {
                "record": "header",
                "format_version": FORMAT_VERSION,
                "d": int(protos.shape[1]),
                "C": int(protos.shape[0]),
            }
        )
    ]
    for c, row in enumerate(storage_rows(protos)):
        lines.append(_dump({"record": "prototype", "class_id": c, "values": row}))

    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote %d prototypes to %s", protos.shape[0], path)
