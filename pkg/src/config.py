import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml
from dotenv import load_dotenv

from src.errors import ParseError, RangeViolationError, UnknownKeyError

load_dotenv()

FORMAT_VERSION = 1

OUTPUT_DIR = Path(os.environ.get("CPLNC_OUTPUT_DIR", "out"))
LOG_LEVEL = os.environ.get("CPLNC_LOG_LEVEL", "INFO")

# Default gate is a fraction of the maximum entropy ln C.
AUTO_GATE_FRACTION = 0.4

FREQUENCY_MODES = ("cumulative", "occupancy")
AUG_PREDICTIONS = ("fused", "textual")

# Symbol and meaning of every knob, listed by `main.py params`.
PARAM_SYMBOLS = {
    "eps": "ε (suppression guard)",
    "s": "s (suppression smoothness)",
    "gamma": "γ (class-aware factor)",
    "base_capacity": "M (base capacity)",
    "max_capacity": "M_max (capacity cap)",
    "eta": "η (inactivity threshold, steps)",
    "delta": "δ (max rejuvenation boost)",
    "alpha_decay": "α (boost frequency decay)",
    "tau": "τ (temperature)",
    "lambda1": "λ1 (alignment weight)",
    "lambda2": "λ2 (negative contrast weight)",
    "alpha_fuse": "α (cache fusion scale)",
    "beta_fuse": "β (cache fusion sharpness)",
    "entropy_gate": "cache admission gate, nats (null = 0.4·ln C)",
    "rho": "ρ (confident view fraction)",
    "entropy_threshold": "t (view entropy threshold, null = ln C)",
    "n_views": "N (views per sample)",
    "ncl_refresh_stride": "hard negative refresh stride, samples",
    "lr": "learning rate",
    "beta1": "β1 (first moment decay)",
    "beta2": "β2 (second moment decay)",
    "eps_opt": "optimizer epsilon",
    "weight_decay": "decoupled weight decay",
    "steps_per_sample": "optimizer steps per sample",
    "frequency_mode": "N_c reading: cumulative | occupancy",
    "aug_prediction": "entropy term prediction: fused | textual",
    "seed": "session seed",
    "rejuvenation_synthesis": "inject synthetic features for dead classes",
    "rejuvenation_mix": "visual share of a synthetic feature",
    "trajectory_stride": "samples between capacity trajectory snapshots",
}


@dataclass(frozen=True)
class HyperParams:
    eps: float = 1e-8
    s: float = 1.0
    gamma: float = 1.0
    base_capacity: int = 3
    max_capacity: int = 10
    eta: int = 100
    delta: float = 3.0
    alpha_decay: float = 2.0
    tau: float = 0.01
    lambda1: float = 1.0
    lambda2: float = 0.5
    alpha_fuse: float = 3.0
    beta_fuse: float = 5.0
    entropy_gate: float | None = None
    rho: float = 0.1
    entropy_threshold: float | None = None
    n_views: int = 8
    ncl_refresh_stride: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    weight_decay: float = 0.0
    steps_per_sample: int = 1
    frequency_mode: str = "cumulative"
    aug_prediction: str = "fused"
    seed: int = 0
    rejuvenation_synthesis: bool = False
    rejuvenation_mix: float = 0.5
    trajectory_stride: int = 100

    def resolved_gate(self, n_classes: int) -> float:
        if self.entropy_gate is None:
            return AUTO_GATE_FRACTION * math.log(n_classes)
        return float(self.entropy_gate)

    def resolved_threshold(self, n_classes: int) -> float:
        if self.entropy_threshold is None:
            return math.log(n_classes)
        return float(self.entropy_threshold)

    def with_overrides(self, **overrides) -> "HyperParams":
        return validate(replace(self, **overrides))

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULTS = HyperParams()

_INT_KEYS = {
    "base_capacity",
    "max_capacity",
    "eta",
    "n_views",
    "ncl_refresh_stride",
    "steps_per_sample",
    "seed",
    "trajectory_stride",
}


def _check(ok: bool, key: str, message: str):
    if not ok:
        raise RangeViolationError(key, message)


def validate(params: HyperParams) -> HyperParams:
    """Abort on any positivity/range violation; returns params unchanged."""
    p = params

    for key in _INT_KEYS:
        value = getattr(p, key)
        _check(
            isinstance(value, int) and not isinstance(value, bool),
            key,
            f"must be an integer, got {value!r}",
        )

    _check(p.eps > 0, "eps", "must be > 0")
    _check(p.s > 0, "s", "must be > 0")
    _check(p.gamma >= 0, "gamma", "must be >= 0")
    _check(p.base_capacity >= 1, "base_capacity", "must be >= 1")
    _check(p.max_capacity >= 1, "max_capacity", "must be >= 1")
    _check(p.eta >= 1, "eta", "must be >= 1")
    _check(p.delta >= 0, "delta", "must be >= 0")
    _check(p.alpha_decay >= 0, "alpha_decay", "must be >= 0")
    _check(p.tau > 0 and math.isfinite(p.tau), "tau", "must be a finite value > 0")
    _check(p.lambda1 >= 0, "lambda1", "must be >= 0")
    _check(p.lambda2 >= 0, "lambda2", "must be >= 0")
    _check(p.alpha_fuse >= 0, "alpha_fuse", "must be >= 0")
    _check(p.beta_fuse >= 0, "beta_fuse", "must be >= 0")
    _check(
        p.entropy_gate is None or not math.isnan(p.entropy_gate),
        "entropy_gate",
        "must be a number, +/-inf or null",
    )
    _check(0 < p.rho <= 1, "rho", "must be in (0, 1]")
    _check(
        p.entropy_threshold is None or not math.isnan(p.entropy_threshold),
        "entropy_threshold",
        "must be a number or null",
    )
    _check(p.n_views >= 1, "n_views", "must be >= 1")
    _check(p.ncl_refresh_stride >= 1, "ncl_refresh_stride", "must be >= 1")
    _check(p.lr >= 0, "lr", "must be >= 0")
    _check(0 <= p.beta1 < 1, "beta1", "must be in [0, 1)")
    _check(0 <= p.beta2 < 1, "beta2", "must be in [0, 1)")
    _check(p.eps_opt > 0, "eps_opt", "must be > 0")
    _check(p.weight_decay >= 0, "weight_decay", "must be >= 0")
    _check(p.steps_per_sample >= 1, "steps_per_sample", "must be >= 1")
    _check(
        p.frequency_mode in FREQUENCY_MODES,
        "frequency_mode",
        f"must be one of {', '.join(FREQUENCY_MODES)}",
    )
    _check(
        p.aug_prediction in AUG_PREDICTIONS,
        "aug_prediction",
        f"must be one of {', '.join(AUG_PREDICTIONS)}",
    )
    _check(0 <= p.rejuvenation_mix <= 1, "rejuvenation_mix", "must be in [0, 1]")
    _check(p.trajectory_stride >= 1, "trajectory_stride", "must be >= 1")

    return p


def coerce_value(key: str, value):
    """YAML gives ints for `1` and floats for `1.0`; accept either for floats."""
    if key in _INT_KEYS:
        if isinstance(value, float) and value.is_integer():
            return int(value)
        return value
    if key in ("frequency_mode", "aug_prediction"):
        return str(value)
    if key == "rejuvenation_synthesis":
        return bool(value)
    if value is None and key in ("entropy_gate", "entropy_threshold"):
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise RangeViolationError(key, f"expected a number, got {value!r}")


def parse_override(text: str) -> tuple[str, object]:
    """`key=value` from the command line; the value is read as a YAML scalar."""
    if "=" not in text:
        raise ParseError(f"override '{text}' is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def parse_values(text: str) -> list:
    """Comma-separated sweep values, each read as a YAML scalar."""
    values = [yaml.safe_load(part) for part in text.split(",") if part.strip()]
    if not values:
        raise ParseError(f"no values in '{text}'")
    return values


def load_config(
    path: Path | str | None = None,
    overrides: dict | None = None,
) -> HyperParams:
    """
    defaults <- config file <- CLI overrides (rightmost wins).
    """
    values: dict = {}

    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(
                f"{path}: invalid config ({exc.__class__.__name__})",
                line=mark.line + 1 if mark is not None else None,
            ) from exc

        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ParseError(f"{path}: config must be a flat key-value mapping")
        values.update(loaded)

    values.update(overrides or {})

    known = {f.name for f in fields(HyperParams)}
    for key in values:
        if key not in known:
            raise UnknownKeyError(str(key))

    coerced = {key: coerce_value(key, value) for key, value in values.items()}
    return validate(replace(DEFAULTS, **coerced))
