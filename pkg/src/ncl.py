"""
Hard-negative mining over visual and textual prototypes and the per-class
three-way InfoNCE penalty built on the mined pairs.
"""

from dataclasses import dataclass

import numpy as np

from src.errors import EmptyActiveSetError, InsufficientClassesError
from src.numerics import logsumexp

# Cosines this close to the row maximum are ties; lowest class index wins.
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class HardNegativePair:
    class_id: int
    visual_neg: int
    textual_neg: int
    refreshed_at: int = 0


def _hardest(similarities: np.ndarray) -> np.ndarray:
    """Row-wise argmax with the diagonal excluded and tolerant tie-breaks."""
    sims = similarities.copy()
    np.fill_diagonal(sims, -np.inf)
    best = sims.max(axis=1, keepdims=True)
    return np.argmax(sims >= best - TIE_TOLERANCE, axis=1)


def mine_hard_negatives(
    visual_protos: dict[int, np.ndarray],
    textual_protos,
    step: int = 0,
) -> dict[int, HardNegativePair]:
    """
    For every class with a visual prototype, the most similar other class on
    the visual side and on the textual side. Only classes with a visual
    prototype take part, as anchors and as candidates.

    textual_protos: mapping or (C, d) array indexed by class.
    """
    eligible = sorted(visual_protos)
    if len(eligible) < 2:
        raise InsufficientClassesError(
            f"need 2 classes with visual prototypes, have {len(eligible)}"
        )

    V = np.stack([visual_protos[c] for c in eligible])
    T = np.stack([np.asarray(textual_protos[c], dtype=np.float64) for c in eligible])

    visual_neg = _hardest(V @ V.T)
    textual_neg = _hardest(T @ T.T)

    return {
        c: HardNegativePair(
            class_id=c,
            visual_neg=eligible[visual_neg[i]],
            textual_neg=eligible[textual_neg[i]],
            refreshed_at=step,
        )
        for i, c in enumerate(eligible)
    }


def ncl_loss_class(
    v_c: np.ndarray,
    t_c: np.ndarray,
    v_neg: np.ndarray,
    t_neg: np.ndarray,
    tau: float,
) -> float:
    logits = np.array(
        [
            np.dot(v_c, t_c),
            np.dot(v_c, t_neg),
            np.dot(v_neg, t_c),
        ]
    ) / tau
    return max(float(logsumexp(logits) - logits[0]), 0.0)


def ncl_loss_total(
    active: list[int],
    visual_protos: dict[int, np.ndarray],
    textual_protos,
    pairs: dict[int, HardNegativePair],
    tau: float,
) -> float:
    if not active:
        raise EmptyActiveSetError("no class holds both a visual prototype and a pair")

    losses = [
        ncl_loss_class(
            visual_protos[c],
            textual_protos[c],
            visual_protos[pairs[c].visual_neg],
            textual_protos[pairs[c].textual_neg],
            tau,
        )
        for c in active
    ]
    return float(np.mean(losses))


def active_classes(
    visual_protos: dict[int, np.ndarray],
    pairs: dict[int, HardNegativePair],
) -> list[int]:
    """Classes currently cached that also hold a pair whose negatives are cached."""
    return [
        c
        for c in sorted(pairs)
        if c in visual_protos and pairs[c].visual_neg in visual_protos
    ]


def pair_diagnostics(
    visual_protos: dict[int, np.ndarray],
    textual_protos,
    pairs: dict[int, HardNegativePair],
    tau: float,
) -> list[dict]:
    rows = []
    for c in active_classes(visual_protos, pairs):
        pair = pairs[c]
        v_c, t_c = visual_protos[c], textual_protos[c]
        v_neg = visual_protos[pair.visual_neg]
        t_neg = textual_protos[pair.textual_neg]
        rows.append(
            {
                "class_id": c,
                "visual_neg": pair.visual_neg,
                "textual_neg": pair.textual_neg,
                "refreshed_at": pair.refreshed_at,
                "cos_pos": float(np.dot(v_c, t_c)),
                "cos_visual_textual_neg": float(np.dot(v_c, t_neg)),
                "cos_visual_neg_textual": float(np.dot(v_neg, t_c)),
                "loss": ncl_loss_class(v_c, t_c, v_neg, t_neg, tau),
            }
        )
    return rows
