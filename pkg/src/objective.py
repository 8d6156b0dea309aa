"""
Composite adaptation objective over the refined textual prototypes:

    total = l_aug + lambda1 * l_align + lambda2 * l_ncl

Only the textual prototypes are parameters. Visual prototypes, cache scores,
the confident-view selection and the mined negative indices are frozen inside
one evaluation, so the analytic gradient below is exact for the function that
`total_loss` computes. Textual rows enter through raw dot products; the
optimizer renormalizes them after every step.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from src.capc_cache import PrototypeCache
from src.config import HyperParams
from src.errors import EmptyActiveSetError, NoViewsError, ShapeMismatchError
from src.ncl import HardNegativePair, active_classes
from src.numerics import entropy, logsumexp, normalize_rows, softmax

# Keeps -ln p finite for probabilities that underflow; such classes carry
# zero weight in the entropy gradient anyway.
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class LossBreakdown:
    l_aug: float
    l_align: float
    l_ncl: float
    total: float
    lambda1: float
    lambda2: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TextualPrototypeSet:
    protos: np.ndarray
    moments_m: np.ndarray
    moments_v: np.ndarray
    step_count: int = 0

    @classmethod
    def from_prototypes(cls, protos) -> "TextualPrototypeSet":
        protos = normalize_rows(protos)
        return cls(
            protos=protos,
            moments_m=np.zeros_like(protos),
            moments_v=np.zeros_like(protos),
        )

    @property
    def n_classes(self) -> int:
        return self.protos.shape[0]


@dataclass(frozen=True)
class LossContext:
    """Everything one loss evaluation holds fixed."""

    views: np.ndarray
    cache_scores: np.ndarray
    selected: np.ndarray
    visual: np.ndarray
    eligible: np.ndarray
    pairs: dict[int, HardNegativePair]
    active: list[int]


# --------------------------------------------------
# VIEW SELECTION
# --------------------------------------------------


def select_views(probs: np.ndarray, rho: float, threshold: float) -> np.ndarray:
    """
    Indices of the confident views: those at or below the entropy threshold,
    trimmed to the lowest-entropy rho fraction. Falls back to the single
    lowest-entropy view when nothing passes.
    """
    probs = np.atleast_2d(probs)
    if probs.shape[0] == 0:
        raise NoViewsError("no views to select from")

    h = entropy(probs)
    passing = np.flatnonzero(h <= threshold)
    if passing.size == 0:
        return np.array([int(np.argmin(h))])

    order = np.argsort(h[passing], kind="stable")
    k = max(1, math.floor(rho * passing.size + 1e-9))
    return np.sort(passing[order[:k]])


def aug_entropy_loss(views, predict, rho: float, entropy_threshold: float) -> float:
    """Entropy of the averaged confident-view prediction."""
    if len(views) == 0:
        raise NoViewsError("no views")
    probs = np.stack([predict(v) for v in views])
    selected = select_views(probs, rho, entropy_threshold)
    return entropy(probs[selected].mean(axis=0))


# --------------------------------------------------
# LOSS TERMS (value and gradient w.r.t. textual rows)
# --------------------------------------------------


def _aug_term(T: np.ndarray, ctx: LossContext, tau: float):
    F = ctx.views[ctx.selected]
    P = softmax(F @ T.T + ctx.cache_scores[ctx.selected], tau)
    P_bar = P.mean(axis=0)
    loss = entropy(P_bar)

    a = -np.log(np.maximum(P_bar, _LOG_FLOOR))
    G_z = P * (a[None, :] - (P @ a)[:, None]) / len(ctx.selected)
    return loss, (G_z.T @ F) / tau


def _align_term(T: np.ndarray, V: np.ndarray, eligible: np.ndarray, tau: float):
    E = np.flatnonzero(eligible)
    if E.size == 0:
        raise EmptyActiveSetError("no class has a visual prototype")

    U = (T[E] @ V[E].T) / tau
    loss = float(np.mean(logsumexp(U, axis=1) - np.diag(U)))

    Q = softmax(U, 1.0)
    grad = np.zeros_like(T)
    grad[E] = ((Q - np.eye(E.size)) @ V[E]) / (tau * E.size)
    return loss, grad


def _ncl_term(
    T: np.ndarray,
    V: np.ndarray,
    active: list[int],
    pairs: dict[int, HardNegativePair],
    tau: float,
):
    if not active:
        raise EmptyActiveSetError("no active class with mined negatives")

    A = np.array(active)
    t_neg_idx = np.array([pairs[c].textual_neg for c in active])
    v_neg_idx = np.array([pairs[c].visual_neg for c in active])

    v_c, t_c = V[A], T[A]
    t_neg, v_neg = T[t_neg_idx], V[v_neg_idx]

    logits = np.stack(
        [
            np.sum(v_c * t_c, axis=1),
            np.sum(v_c * t_neg, axis=1),
            np.sum(v_neg * t_c, axis=1),
        ],
        axis=1,
    ) / tau
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[:, 0]))

    W = softmax(logits, 1.0)
    scale = tau * A.size
    grad = np.zeros_like(T)
    np.add.at(grad, A, ((W[:, [0]] - 1.0) * v_c + W[:, [2]] * v_neg) / scale)
    np.add.at(grad, t_neg_idx, (W[:, [1]] * v_c) / scale)
    return loss, grad


def align_loss(textual_protos, visual_protos: dict[int, np.ndarray], tau: float) -> float:
    """Class-mean InfoNCE: refined text row as anchor, own visual prototype positive."""
    T = np.asarray(textual_protos, dtype=np.float64)
    V = np.zeros_like(T)
    eligible = np.zeros(T.shape[0], dtype=bool)
    for c, proto in visual_protos.items():
        V[c] = proto
        eligible[c] = True
    return _align_term(T, V, eligible, tau)[0]


# --------------------------------------------------
# TOTAL
# --------------------------------------------------


def build_context(
    views: np.ndarray,
    cache: PrototypeCache,
    pairs: dict[int, HardNegativePair],
    params: HyperParams,
    T: np.ndarray,
    selected: np.ndarray | None = None,
) -> LossContext:
    views = np.atleast_2d(np.asarray(views, dtype=np.float64))
    if views.shape[0] == 0:
        raise NoViewsError("record has no views")

    fused_scores = cache.cache_scores(views, params.alpha_fuse, params.beta_fuse)
    if params.aug_prediction == "fused":
        loss_scores = fused_scores
    else:
        loss_scores = np.zeros_like(fused_scores)

    if selected is None:
        probs = softmax(views @ T.T + loss_scores, params.tau)
        selected = select_views(
            probs, params.rho, params.resolved_threshold(T.shape[0])
        )

    visual, eligible = cache.prototype_matrix()
    visual_map = {c: visual[c] for c in np.flatnonzero(eligible)}

    return LossContext(
        views=views,
        cache_scores=loss_scores,
        selected=np.asarray(selected),
        visual=visual,
        eligible=eligible,
        pairs=pairs,
        active=active_classes(visual_map, pairs),
    )


def _evaluate(T: np.ndarray, ctx: LossContext, params: HyperParams):
    T = np.asarray(T, dtype=np.float64)
    tau = params.tau

    l_aug, g_aug = _aug_term(T, ctx, tau)

    try:
        l_align, g_align = _align_term(T, ctx.visual, ctx.eligible, tau)
    except EmptyActiveSetError:
        l_align, g_align = 0.0, np.zeros_like(T)

    # With lambda2 off the mined negatives must not influence anything.
    l_ncl, g_ncl = 0.0, np.zeros_like(T)
    if params.lambda2 != 0:
        try:
            l_ncl, g_ncl = _ncl_term(T, ctx.visual, ctx.active, ctx.pairs, tau)
        except EmptyActiveSetError:
            pass

    breakdown = LossBreakdown(
        l_aug=l_aug,
        l_align=l_align,
        l_ncl=l_ncl,
        total=l_aug + params.lambda1 * l_align + params.lambda2 * l_ncl,
        lambda1=params.lambda1,
        lambda2=params.lambda2,
    )
    grad = g_aug + params.lambda1 * g_align + params.lambda2 * g_ncl
    return breakdown, grad


def total_loss(T: np.ndarray, ctx: LossContext, params: HyperParams) -> LossBreakdown:
    return _evaluate(T, ctx, params)[0]


def grad_textual(T: np.ndarray, ctx: LossContext, params: HyperParams) -> np.ndarray:
    return _evaluate(T, ctx, params)[1]


def loss_and_grad(T: np.ndarray, ctx: LossContext, params: HyperParams):
    return _evaluate(T, ctx, params)


# --------------------------------------------------
# OPTIMIZER
# --------------------------------------------------


def adamw_update(
    params: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
):
    """One bias-corrected AdamW update; returns (params, m, v) without renormalizing."""
    params = params * (1.0 - lr * weight_decay)

    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * (grad * grad)

    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)

    params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, m, v


def optimizer_step(
    state: TextualPrototypeSet,
    grad: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps_opt: float,
    weight_decay: float,
) -> TextualPrototypeSet:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.protos.shape:
        raise ShapeMismatchError(
            f"gradient shape {grad.shape} against prototypes {state.protos.shape}"
        )

    step_count = state.step_count + 1
    raw, m, v = adamw_update(
        state.protos,
        grad,
        state.moments_m,
        state.moments_v,
        step_count,
        lr,
        beta1,
        beta2,
        eps_opt,
        weight_decay,
    )
    return TextualPrototypeSet(
        protos=normalize_rows(raw),
        moments_m=m,
        moments_v=v,
        step_count=step_count,
    )
