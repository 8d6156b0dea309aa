"""
Class-aware prototype cache.

Each class keeps a bounded list of low-entropy embeddings. The per-class bound
follows the test-time activation frequency of the class (frequent classes get
less room, rare ones more) and is temporarily raised for classes that have not
been refreshed for a while.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.config import HyperParams
from src.errors import NotInactiveError, UnknownClassError, ZeroVectorError
from src.numerics import normalize

logger = logging.getLogger(__name__)


class AdmitOutcome(str, Enum):
    INSERTED = "Inserted"
    REPLACED_WORST = "ReplacedWorst"
    REJECTED_GATE = "RejectedGate"
    REJECTED_FULL = "RejectedFull"


@dataclass(frozen=True)
class CacheEntry:
    embedding: np.ndarray
    admission_entropy: float
    admission_step: int
    synthetic: bool = False


@dataclass
class ClassCache:
    class_id: int
    entries: list[CacheEntry] = field(default_factory=list)
    activation_count: int = 0
    last_update_step: int | None = None

    def worst_index(self) -> int:
        """Highest admission entropy; the oldest entry wins ties."""
        worst = 0
        for i, entry in enumerate(self.entries):
            if entry.admission_entropy > self.entries[worst].admission_entropy:
                worst = i
        return worst


@dataclass(frozen=True)
class CapacityDecision:
    base: int
    boost: int
    total: int
    p_c: float
    phi: float


# --------------------------------------------------
# CAPACITY LAWS
# --------------------------------------------------


def activation_frequency(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return np.full(counts.shape, 1.0 / counts.size)
    return counts / total


def suppression(p_c: float, eps: float, s: float) -> float:
    return math.tanh(-math.log(p_c + eps) / s)


def base_capacity(
    p_c: float,
    M: int,
    gamma: float,
    M_max: int,
    eps: float,
    s: float,
) -> int:
    phi = suppression(p_c, eps, s)
    return min(M_max, max(1, math.ceil(M * (1 + gamma * phi))))


def is_inactive(
    t: int,
    t_c: int | None,
    eta: int,
    *,
    ever_labeled: bool = True,
) -> bool:
    """
    t - t_c > eta. A class that never received an admission counts from
    step 0, but only once it has been pseudo-labeled at least once.
    """
    if t_c is None:
        return ever_labeled and t > eta
    return t - t_c > eta


def boost_amount(
    p_c: float,
    elapsed: int,
    delta: float,
    alpha_decay: float,
    eta: int,
) -> int:
    """ceil(delta * exp(-alpha_decay * p_c) * elapsed / eta), ungated."""
    return math.ceil(delta * math.exp(-alpha_decay * p_c) * elapsed / eta)


def rejuvenation_boost(
    p_c: float,
    t: int,
    t_c: int | None,
    delta: float,
    alpha_decay: float,
    eta: int,
) -> int:
    if not is_inactive(t, t_c, eta):
        raise NotInactiveError(f"t={t}, t_c={t_c} is within eta={eta}")
    elapsed = t - (t_c if t_c is not None else 0)
    return boost_amount(p_c, elapsed, delta, alpha_decay, eta)


# --------------------------------------------------
# CACHE
# --------------------------------------------------


class PrototypeCache:
    """Per-class caches plus the global statistics the capacity laws read."""

    def __init__(self, n_classes: int, dim: int, params: HyperParams):
        self.n_classes = n_classes
        self.dim = dim
        self.params = params
        self.entropy_gate = params.resolved_gate(n_classes)
        self.classes = [ClassCache(class_id=c) for c in range(n_classes)]
        self._prototypes: dict[int, np.ndarray | None] = {}
        # Capacity the latest admit was decided under; None after a gate rejection.
        self.last_decision: CapacityDecision | None = None

    def _class(self, class_id: int) -> ClassCache:
        if not 0 <= class_id < self.n_classes:
            raise UnknownClassError(
                f"class {class_id} outside [0, {self.n_classes})"
            )
        return self.classes[class_id]

    def frequency_counts(self) -> np.ndarray:
        if self.params.frequency_mode == "occupancy":
            return np.array([len(c.entries) for c in self.classes])
        return np.array([c.activation_count for c in self.classes])

    def frequencies(self) -> np.ndarray:
        return activation_frequency(self.frequency_counts())

    def total_capacity(self, class_id: int, step: int) -> CapacityDecision:
        cache = self._class(class_id)
        p = self.params
        p_c = float(self.frequencies()[class_id])

        phi = suppression(p_c, p.eps, p.s)
        base = base_capacity(p_c, p.base_capacity, p.gamma, p.max_capacity, p.eps, p.s)

        boost = 0
        if is_inactive(
            step,
            cache.last_update_step,
            p.eta,
            ever_labeled=cache.activation_count > 0,
        ):
            boost = rejuvenation_boost(
                p_c, step, cache.last_update_step, p.delta, p.alpha_decay, p.eta
            )

        return CapacityDecision(
            base=base, boost=boost, total=base + boost, p_c=p_c, phi=phi
        )

    def _evict(self, cache: ClassCache) -> CacheEntry:
        self._prototypes.pop(cache.class_id, None)
        return cache.entries.pop(cache.worst_index())

    def shrink_to_capacity(self, class_id: int, step: int) -> int:
        cache = self._class(class_id)
        capacity = self.total_capacity(class_id, step).total

        evicted = 0
        while len(cache.entries) > capacity:
            self._evict(cache)
            evicted += 1

        if evicted:
            logger.debug(
                "class %d: capacity %d, evicted %d entries", class_id, capacity, evicted
            )
        return evicted

    def admit(
        self,
        f_v: np.ndarray,
        pseudo_label: int,
        sample_entropy: float,
        step: int,
    ) -> AdmitOutcome:
        cache = self._class(pseudo_label)
        cache.activation_count += 1
        self.last_decision = None

        if sample_entropy > self.entropy_gate:
            return AdmitOutcome.REJECTED_GATE

        self.shrink_to_capacity(pseudo_label, step)
        self.last_decision = self.total_capacity(pseudo_label, step)
        capacity = self.last_decision.total
        entry = CacheEntry(
            embedding=np.asarray(f_v, dtype=np.float64),
            admission_entropy=float(sample_entropy),
            admission_step=step,
        )

        if len(cache.entries) < capacity:
            outcome = AdmitOutcome.INSERTED
        elif sample_entropy < cache.entries[cache.worst_index()].admission_entropy:
            self._evict(cache)
            outcome = AdmitOutcome.REPLACED_WORST
        else:
            return AdmitOutcome.REJECTED_FULL

        cache.entries.append(entry)
        cache.last_update_step = step
        self._prototypes.pop(pseudo_label, None)
        return outcome

    def inject(
        self,
        class_id: int,
        embedding: np.ndarray,
        entropy: float,
        step: int,
    ):
        """Store a synthetic entry without touching N_c or t_c."""
        cache = self._class(class_id)
        cache.entries.append(
            CacheEntry(
                embedding=np.asarray(embedding, dtype=np.float64),
                admission_entropy=float(entropy),
                admission_step=step,
                synthetic=True,
            )
        )
        self._prototypes.pop(class_id, None)

    # --------------------------------------------------
    # PROTOTYPES & SCORING
    # --------------------------------------------------

    def visual_prototype(self, class_id: int) -> np.ndarray | None:
        cache = self._class(class_id)
        if class_id in self._prototypes:
            return self._prototypes[class_id]

        proto = None
        if cache.entries:
            mean = np.mean([e.embedding for e in cache.entries], axis=0)
            try:
                proto = normalize(mean)
            except ZeroVectorError:
                proto = None

        self._prototypes[class_id] = proto
        return proto

    def visual_prototypes(self) -> dict[int, np.ndarray]:
        """Non-Empty visual prototypes keyed by class."""
        protos = {}
        for c in range(self.n_classes):
            proto = self.visual_prototype(c)
            if proto is not None:
                protos[c] = proto
        return protos

    def prototype_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(C, d) prototype rows (zeros where Empty) and the non-Empty mask."""
        matrix = np.zeros((self.n_classes, self.dim))
        mask = np.zeros(self.n_classes, dtype=bool)
        for c, proto in self.visual_prototypes().items():
            matrix[c] = proto
            mask[c] = True
        return matrix, mask

    def cache_score(
        self,
        f_v: np.ndarray,
        class_id: int,
        alpha_fuse: float,
        beta_fuse: float,
    ) -> float:
        proto = self.visual_prototype(class_id)
        if proto is None:
            return 0.0
        return alpha_fuse * math.exp(-beta_fuse * (1.0 - float(np.dot(f_v, proto))))

    def cache_scores(
        self,
        views: np.ndarray,
        alpha_fuse: float,
        beta_fuse: float,
    ) -> np.ndarray:
        """Scores for a stack of views, shape (N, C); Empty classes score 0."""
        views = np.atleast_2d(views)
        matrix, mask = self.prototype_matrix()
        scores = alpha_fuse * np.exp(-beta_fuse * (1.0 - views @ matrix.T))
        return np.where(mask[None, :], scores, 0.0)

    # --------------------------------------------------
    # DIAGNOSTICS
    # --------------------------------------------------

    def snapshot(self, step: int) -> list[dict]:
        rows = []
        for cache in self.classes:
            decision = self.total_capacity(cache.class_id, step)
            rows.append(
                {
                    "class_id": cache.class_id,
                    "activation_count": cache.activation_count,
                    "last_update_step": cache.last_update_step,
                    "base": decision.base,
                    "boost": decision.boost,
                    "total": decision.total,
                    "p_c": decision.p_c,
                    "phi": decision.phi,
                    "entries": len(cache.entries),
                    "synthetic_entries": sum(e.synthetic for e in cache.entries),
                    "admission_entropies": [
                        e.admission_entropy for e in cache.entries
                    ],
                    "inactive": is_inactive(
                        step,
                        cache.last_update_step,
                        self.params.eta,
                        ever_labeled=cache.activation_count > 0,
                    ),
                }
            )
        return rows
