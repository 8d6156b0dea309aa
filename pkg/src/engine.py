"""
Per-sample adaptation pipeline: predict with the fused head, aggregate the
confident views, refine the textual prototypes, then admit the canonical
view into the cache of its pseudo-label.
"""

import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from src.capc_cache import AdmitOutcome, PrototypeCache, is_inactive
from src.config import HyperParams
from src.errors import (
    DimensionMismatchError,
    InsufficientClassesError,
    NoViewsError,
    UnknownClassError,
)
from src.ncl import HardNegativePair, mine_hard_negatives, pair_diagnostics
from src.numerics import entropy, normalize, softmax
from src.objective import (
    LossBreakdown,
    TextualPrototypeSet,
    build_context,
    loss_and_grad,
    optimizer_step,
    select_views,
)

logger = logging.getLogger(__name__)

TAIL_FRACTION = 0.2


@dataclass(frozen=True)
class StreamRecord:
    sample_id: int
    views: np.ndarray
    true_label: int | None = None

    @property
    def canonical(self) -> np.ndarray:
        return self.views[0]


@dataclass
class PredictionReport:
    sample_id: int
    probabilities: np.ndarray
    pseudo_label: int
    sample_entropy: float
    admit_outcome: AdmitOutcome
    true_label: int | None = None
    loss: LossBreakdown | None = None
    capacity: dict | None = None

    def to_dict(self) -> dict:
        row = {
            "sample_id": self.sample_id,
            "probabilities": self.probabilities.tolist(),
            "pseudo_label": self.pseudo_label,
            "sample_entropy": self.sample_entropy,
            "admit_outcome": self.admit_outcome.value,
            "true_label": self.true_label,
        }
        if self.loss is not None:
            row["loss"] = self.loss.to_dict()
        if self.capacity is not None:
            row["capacity"] = self.capacity
        return row


@dataclass
class SessionReport:
    config: dict
    records: list[PredictionReport]
    summary: dict
    cache: list[dict]
    negatives: list[dict]


# --------------------------------------------------
# PREDICTION
# --------------------------------------------------


def fused_probability(
    f_v: np.ndarray,
    textual: TextualPrototypeSet,
    cache: PrototypeCache,
    alpha_fuse: float,
    beta_fuse: float,
    tau: float,
) -> np.ndarray:
    """softmax((f_v . t_c + cache score of c) / tau) over classes."""
    logits = textual.protos @ f_v + cache.cache_scores(f_v, alpha_fuse, beta_fuse)[0]
    return softmax(logits, tau)


def fused_probabilities(
    views: np.ndarray,
    textual: TextualPrototypeSet,
    cache: PrototypeCache,
    params: HyperParams,
) -> np.ndarray:
    logits = views @ textual.protos.T + cache.cache_scores(
        views, params.alpha_fuse, params.beta_fuse
    )
    return softmax(logits, params.tau)


def aggregate_views(
    views: np.ndarray,
    textual: TextualPrototypeSet,
    cache: PrototypeCache,
    params: HyperParams,
):
    """Averaged confident-view prediction, its entropy, and the selected views."""
    views = np.atleast_2d(views)
    if views.shape[0] == 0:
        raise NoViewsError("record has no views")

    probs = fused_probabilities(views, textual, cache, params)
    selected = select_views(
        probs, params.rho, params.resolved_threshold(textual.n_classes)
    )
    averaged = probs[selected].mean(axis=0)
    return averaged, entropy(averaged), selected


def synthesize_rejuvenation_feature(
    class_id: int,
    textual: TextualPrototypeSet,
    cache: PrototypeCache,
    mix: float,
) -> np.ndarray | None:
    """
    normalize((1 - mix) * t_c + mix * v_j), v_j the cached visual prototype
    closest to t_c among other classes. None when no other class is cached.
    """
    t_c = textual.protos[class_id]
    candidates = {
        c: proto for c, proto in cache.visual_prototypes().items() if c != class_id
    }
    if not candidates:
        return None

    nearest = max(sorted(candidates), key=lambda c: float(candidates[c] @ t_c))
    return normalize((1.0 - mix) * t_c + mix * candidates[nearest])


# --------------------------------------------------
# SESSION
# --------------------------------------------------


class AdaptationSession:
    def __init__(self, params: HyperParams, initial_textual: np.ndarray):
        initial_textual = np.asarray(initial_textual, dtype=np.float64)
        self.params = params
        self.n_classes, self.dim = initial_textual.shape
        self.textual = TextualPrototypeSet.from_prototypes(initial_textual)
        self.initial_textual = self.textual.protos.copy()
        self.cache = PrototypeCache(self.n_classes, self.dim, params)
        self.pairs: dict[int, HardNegativePair] = {}
        self.step = 0

    def _validate(self, record: StreamRecord) -> np.ndarray:
        views = np.atleast_2d(np.asarray(record.views, dtype=np.float64))
        if views.shape[0] == 0:
            raise NoViewsError(f"sample {record.sample_id} has no views")
        if views.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"sample {record.sample_id}: view dimension {views.shape[1]}, "
                f"prototypes have d={self.dim}"
            )
        if record.true_label is not None and not 0 <= record.true_label < self.n_classes:
            raise UnknownClassError(
                f"sample {record.sample_id}: label {record.true_label} "
                f"outside [0, {self.n_classes})"
            )
        return views

    def refresh_negatives(self):
        try:
            self.pairs = mine_hard_negatives(
                self.cache.visual_prototypes(), self.textual.protos, step=self.step
            )
            logger.debug("step %d: mined %d hard negative pairs", self.step, len(self.pairs))
        except InsufficientClassesError as exc:
            logger.debug("step %d: negative refresh skipped (%s)", self.step, exc)

    def _rejuvenate(self):
        gate = self.cache.entropy_gate
        if gate == -math.inf:
            return
        sentinel = min(gate, math.log(self.n_classes))

        for cache in self.cache.classes:
            if cache.entries or not is_inactive(
                self.step,
                cache.last_update_step,
                self.params.eta,
                ever_labeled=cache.activation_count > 0,
            ):
                continue
            feature = synthesize_rejuvenation_feature(
                cache.class_id, self.textual, self.cache, self.params.rejuvenation_mix
            )
            if feature is not None:
                self.cache.inject(cache.class_id, feature, sentinel, self.step)
                logger.debug(
                    "step %d: synthetic feature injected for class %d",
                    self.step,
                    cache.class_id,
                )

    def process_sample(
        self,
        record: StreamRecord,
        *,
        trace_loss: bool = False,
        trace_cache: bool = False,
    ) -> PredictionReport:
        p = self.params
        views = self._validate(record)

        probs, sample_entropy, selected = aggregate_views(
            views, self.textual, self.cache, p
        )
        pseudo_label = int(np.argmax(probs))

        if self.step % p.ncl_refresh_stride == 0:
            self.refresh_negatives()

        ctx = build_context(
            views, self.cache, self.pairs, p, self.textual.protos, selected=selected
        )
        breakdown = None
        for _ in range(p.steps_per_sample):
            loss, grad = loss_and_grad(self.textual.protos, ctx, p)
            if breakdown is None:
                breakdown = loss
            self.textual = optimizer_step(
                self.textual, grad, p.lr, p.beta1, p.beta2, p.eps_opt, p.weight_decay
            )

        outcome = self.cache.admit(
            views[0], pseudo_label, sample_entropy, self.step
        )
        decision = self.cache.last_decision

        if p.rejuvenation_synthesis:
            self._rejuvenate()

        capacity = None
        if trace_cache:
            if decision is None:
                decision = self.cache.total_capacity(pseudo_label, self.step)
            capacity = asdict(decision) | {
                "entries": len(self.cache.classes[pseudo_label].entries)
            }

        self.step += 1

        return PredictionReport(
            sample_id=record.sample_id,
            probabilities=probs,
            pseudo_label=pseudo_label,
            sample_entropy=sample_entropy,
            admit_outcome=outcome,
            true_label=record.true_label,
            loss=breakdown if trace_loss else None,
            capacity=capacity,
        )

    def zero_shot_label(self, record: StreamRecord) -> int:
        logits = self.initial_textual @ np.asarray(record.canonical, dtype=np.float64)
        return int(np.argmax(softmax(logits, self.params.tau)))

    def trajectory_point(self) -> dict:
        return {
            "step": self.step,
            "total": [
                self.cache.total_capacity(c, self.step).total
                for c in range(self.n_classes)
            ],
            "entries": [len(c.entries) for c in self.cache.classes],
        }


# --------------------------------------------------
# SUMMARY METRICS
# --------------------------------------------------


def tail_classes(labels, n_classes: int) -> list[int]:
    """The ceil(C/5) rarest classes by label count; lower index is rarer on ties."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes)
    n_tail = math.ceil(n_classes * TAIL_FRACTION)
    order = sorted(range(n_classes), key=lambda c: (counts[c], c))
    return sorted(order[:n_tail])


def summarize(
    records: list[PredictionReport],
    zero_shot: list[int],
    session: AdaptationSession,
    cache_rows: list[dict],
) -> dict:
    n_classes = session.n_classes
    summary = {
        "n_samples": len(records),
        "n_classes": n_classes,
        "dim": session.dim,
        "final_step": session.step,
        "outcomes": {
            outcome.value: sum(r.admit_outcome is outcome for r in records)
            for outcome in AdmitOutcome
        },
        "dead_classes": sum(row["inactive"] for row in cache_rows),
        "cached_classes": sum(row["entries"] > 0 for row in cache_rows),
    }

    labeled = [
        (r, z) for r, z in zip(records, zero_shot) if r.true_label is not None
    ]
    if not labeled:
        summary.update(
            accuracy=None,
            zero_shot_accuracy=None,
            per_class_accuracy=None,
            tail_classes=None,
            tail_accuracy=None,
            tail_retention=None,
        )
        return summary

    truth = np.array([r.true_label for r, _ in labeled])
    pred = np.array([r.pseudo_label for r, _ in labeled])
    zs = np.array([z for _, z in labeled])

    per_class = []
    for c in range(n_classes):
        mask = truth == c
        per_class.append(float(np.mean(pred[mask] == c)) if mask.any() else None)

    tail = tail_classes(truth, n_classes)
    tail_scores = [per_class[c] for c in tail if per_class[c] is not None]

    accuracy = float(np.mean(pred == truth))
    zero_shot_accuracy = float(np.mean(zs == truth))
    summary.update(
        accuracy=accuracy,
        zero_shot_accuracy=zero_shot_accuracy,
        gain_over_zero_shot=accuracy - zero_shot_accuracy,
        per_class_accuracy=per_class,
        tail_classes=tail,
        tail_accuracy=float(np.mean(tail_scores)) if tail_scores else None,
        tail_retention=float(
            np.mean([cache_rows[c]["entries"] > 0 for c in tail])
        ),
    )
    return summary


def run_session(
    stream,
    params: HyperParams,
    initial_textual: np.ndarray,
    *,
    trace_loss: bool = False,
    trace_cache: bool = False,
    config_echo: dict | None = None,
) -> SessionReport:
    session = AdaptationSession(params, initial_textual)
    records: list[PredictionReport] = []
    zero_shot: list[int] = []
    trajectory: list[dict] = []

    started = time.perf_counter()
    for record in stream:
        zero_shot.append(session.zero_shot_label(record))
        records.append(
            session.process_sample(
                record, trace_loss=trace_loss, trace_cache=trace_cache
            )
        )
        if session.step % params.trajectory_stride == 0:
            trajectory.append(session.trajectory_point())
    elapsed = time.perf_counter() - started

    cache_rows = session.cache.snapshot(session.step)
    summary = summarize(records, zero_shot, session, cache_rows)
    summary["trajectory"] = trajectory

    logger.info(
        "session done: %d samples in %.2fs, accuracy=%s",
        len(records),
        elapsed,
        summary["accuracy"],
    )

    config = {"params": params.to_dict(), "seed": params.seed}
    config.update(config_echo or {})
    return SessionReport(
        config=config,
        records=records,
        summary=summary,
        cache=cache_rows,
        negatives=pair_diagnostics(
            session.cache.visual_prototypes(),
            session.textual.protos,
            session.pairs,
            params.tau,
        ),
    )


def stream_digest(stream) -> str:
    """SHA-256 over the view bytes and labels of a stream (pairing check)."""
    digest = hashlib.sha256()
    for record in stream:
        digest.update(np.ascontiguousarray(record.views, dtype=np.float64).tobytes())
        digest.update(str(record.true_label).encode())
    return digest.hexdigest()
