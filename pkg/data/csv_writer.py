from pathlib import Path

import pandas as pd


def write_csv(table: pd.DataFrame, path: Path | str, sort_by: str | None = None):
    """
    Summary tables (ablation runs, sweeps) as CSV.

    :param table: one row per config or per (config, seed)
    :param sort_by: optional column to sort on before writing
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    df = table.copy()
    if sort_by is not None:
        df.sort_values(sort_by, inplace=True, kind="stable")
    df.to_csv(path, index=False, float_format="%.6g")
