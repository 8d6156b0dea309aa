import pandas as pd

# --------------------------------------------------
# CONSTANTS
# --------------------------------------------------

SEPARATOR = "────────────────────────\n"
SUB_SEPARATOR = "· · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · · ·\n"

CACHE_COLUMNS = [
    "class_id",
    "activation_count",
    "last_update_step",
    "p_c",
    "base",
    "boost",
    "total",
    "entries",
    "min_entropy",
    "max_entropy",
    "inactive",
]

# --------------------------------------------------
# FORMATTING
# --------------------------------------------------


def fmt(value, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def cache_frame(cache_rows: list[dict]) -> pd.DataFrame:
    rows = []
    for row in cache_rows:
        entropies = row.get("admission_entropies") or []
        rows.append(
            {
                **row,
                "last_update_step": (
                    "never" if row["last_update_step"] is None else row["last_update_step"]
                ),
                "min_entropy": min(entropies) if entropies else None,
                "max_entropy": max(entropies) if entropies else None,
            }
        )
    df = pd.DataFrame(rows, columns=CACHE_COLUMNS)
    return df.sort_values("class_id", kind="stable")


def negatives_frame(negative_rows: list[dict]) -> pd.DataFrame:
    return pd.DataFrame(
        negative_rows,
        columns=["class_id", "visual_neg", "textual_neg", "cos_pos", "loss"],
    )


# --------------------------------------------------
# OUTPUT
# --------------------------------------------------


def build_cache_table(report: dict) -> str:
    """
    Human-readable capacity / dead-class view of a loaded session report.

    report → output of src.parsing.load_report
    """
    summary = report["summary"]
    lines = []

    lines.append("Class-aware cache state")
    lines.append(
        f"samples: {summary['n_samples']} | classes: {summary['n_classes']} | "
        f"final step: {summary['final_step']}\n"
    )
    lines.append(
        f"accuracy: {fmt(summary.get('accuracy'))} | "
        f"zero-shot: {fmt(summary.get('zero_shot_accuracy'))} | "
        f"tail accuracy: {fmt(summary.get('tail_accuracy'))} | "
        f"tail retention: {fmt(summary.get('tail_retention'))}\n"
    )
    lines.append(SUB_SEPARATOR)

    df = cache_frame(report["cache"])
    lines.append(df.to_string(index=False, float_format=lambda x: f"{x:.4f}"))
    lines.append("")

    dead = df.loc[df["inactive"].astype(bool), "class_id"].tolist()
    lines.append(SUB_SEPARATOR)
    if dead:
        lines.append(f"Dead classes ({len(dead)}): {', '.join(str(c) for c in dead)}\n")
    else:
        lines.append("No dead classes at stream end\n")

    if report["negatives"]:
        lines.append(SUB_SEPARATOR)
        lines.append("Hard negatives at stream end\n")
        lines.append(
            negatives_frame(report["negatives"]).to_string(
                index=False, float_format=lambda x: f"{x:.4f}"
            )
        )
        lines.append("")

    lines.append(SEPARATOR)
    return "\n".join(lines)


def build_run_summary(summary: dict) -> str:
    outcomes = summary["outcomes"]
    lines = [
        f"samples: {summary['n_samples']}",
        f"accuracy: {fmt(summary.get('accuracy'))} "
        f"(zero-shot {fmt(summary.get('zero_shot_accuracy'))})",
        f"tail accuracy: {fmt(summary.get('tail_accuracy'))}",
        f"tail retention: {fmt(summary.get('tail_retention'))}",
        f"dead classes: {summary['dead_classes']}",
        "admissions: " + ", ".join(f"{k}={v}" for k, v in outcomes.items()),
    ]
    return "\n".join(lines)
