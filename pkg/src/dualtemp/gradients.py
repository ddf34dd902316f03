"""Analytic gradients of the contrastive losses and a finite-difference
checker to validate them.

The central object is the decomposition of the softmax contrastive
gradient on the query into a positive-paired vector component (which
direction to move) and a scalar component (how hard to move), each a
function of the anchor's similarity structure.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics
from .losses import ContrastiveInstance

__all__ = [
    "AnchorWeights",
    "GradDecomposition",
    "prob_weights",
    "simple_grad",
    "infonce_grad",
    "fd_gradient",
    "through_l2_normalize",
]


@dataclass(frozen=True)
class AnchorWeights:
    """Softmax weights of one anchor: p_pos and p_neg share the full
    denominator (positive included); p_hat renormalizes p_neg over the
    negatives alone, so the positive term cancels out of it."""

    p_pos: float
    p_neg: np.ndarray
    p_hat: np.ndarray = field(init=False)
    scalar_sum: float = field(init=False)

    def __post_init__(self):
        total = float(np.sum(self.p_neg))
        object.__setattr__(self, "scalar_sum", total)
        object.__setattr__(self, "p_hat", self.p_neg / total)


def prob_weights(inst: ContrastiveInstance, tau: float) -> AnchorWeights:
    """Softmax weights of the anchor's positive and negatives at tau."""
    if inst.n_negatives == 0:
        raise ValueError("weights need at least one negative key")
    logits = np.concatenate(
        ([float(inst.query @ inst.positive_key)], inst.negative_keys @ inst.query)
    )
    p = numerics.tempered_softmax(logits, tau)
    return AnchorWeights(float(p[0]), p[1:])


@dataclass(frozen=True)
class GradDecomposition:
    """Query gradient split into its frozen scalar magnitude and the
    vector direction; full_grad = -(1/tau) * scalar * vector."""

    scalar: float
    vector: np.ndarray
    tau: float
    full_grad: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "full_grad", -(self.scalar / self.tau) * self.vector)


def simple_grad(inst: ContrastiveInstance) -> np.ndarray:
    """Query gradient of the uniform-weight loss: -(k+ - mean_j k_j).

    Constant in the similarities, hence blind to negative hardness.
    """
    if inst.n_negatives == 0:
        raise ValueError("simple gradient needs at least one negative key")
    return -(inst.positive_key - np.mean(inst.negative_keys, axis=0))


def infonce_grad(inst: ContrastiveInstance, tau: float) -> GradDecomposition:
    """Query gradient of the softmax contrastive loss, decomposed.

    scalar = sum_j p_j (equals 1 - p_pos), vector = k+ - sum_j p_hat_j k_j.
    Both reweight by similarity, which is where hardness-awareness lives.
    """
    w = prob_weights(inst, tau)
    vector = inst.positive_key - w.p_hat @ inst.negative_keys
    return GradDecomposition(w.scalar_sum, vector, tau)


def fd_gradient(
    loss_fn: Callable[[np.ndarray], float], at: np.ndarray, h: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    Oracle for the analytic gradients; quadratic in h, so h around 1e-4
    balances truncation against cancellation for losses of order one.
    """
    at = np.asarray(at, dtype=np.float64)
    grad = np.zeros_like(at)
    flat = grad.reshape(-1)
    for i in range(at.size):
        bump = np.zeros_like(at).reshape(-1)
        bump[i] = h
        bump = bump.reshape(at.shape)
        hi = loss_fn(at + bump)
        lo = loss_fn(at - bump)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"loss not finite near probe point (coordinate {i})")
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def through_l2_normalize(raw: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient on z = raw/|raw| back to the raw vector.

    dL/draw = (dL/dz - z (z . dL/dz)) / |raw|: the component along z is
    projected out, then scaled by the inverse norm.
    """
    unit = numerics.l2_normalize(raw)
    norm = float(np.linalg.norm(np.asarray(raw, dtype=np.float64)))
    return (grad_unit - unit * (unit @ grad_unit)) / norm
