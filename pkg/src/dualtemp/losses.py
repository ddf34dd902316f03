"""Contrastive and related losses.

Covers the softmax contrastive loss (InfoNCE), the uniform-weight simple
loss, the stop-gradient decomposed loss with independent temperatures for
its scalar and vector factors, the batch dual-temperature loss used by
SimCo, the predictor/stop-gradient loss of non-contrastive frameworks, and
the cross-entropy variants.

Stop-gradient is realized by materializing frozen factors as plain numbers
before they multiply anything differentiable; functions that induce a
gradient return it analytically, so no autodiff is involved anywhere.
"""

from dataclasses import InitVar, dataclass, field

import numpy as np

from . import numerics

__all__ = [
    "ContrastiveInstance",
    "DualTempConfig",
    "BatchPair",
    "DTWeightFactor",
    "LogitInstance",
    "infonce_loss",
    "simple_loss",
    "decomposed_loss",
    "dt_loss",
    "dt_loss_with_grads",
    "dt_weight_factors",
    "batch_infonce_loss",
    "noncl_loss",
    "noncl_loss_grad",
    "ce_loss",
    "ce_dt_loss",
    "ce_dt_grad",
    "one_hot_instance",
]

UNIT_NORM_TOL = 1e-6


def _check_unit_rows(rows: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(rows, axis=-1)
    bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
    if np.any(bad):
        raise ValueError(f"{what} must be unit norm (worst |norm-1| = {np.max(np.abs(norms - 1.0)):.3e})")


@dataclass(frozen=True)
class ContrastiveInstance:
    """One anchor with its positive key and K >= 0 negative keys.

    All vectors share one dimension and are unit norm within 1e-6. Pass
    ``check=False`` to skip the norm check, e.g. when probing the loss at
    perturbed points for finite differences.
    """

    query: np.ndarray
    positive_key: np.ndarray
    negative_keys: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check: bool):
        q = numerics.as_vector(self.query)
        pos = numerics.as_vector(self.positive_key)
        negs = numerics.as_vector(self.negative_keys)
        if negs.size == 0:
            negs = np.zeros((0, q.shape[0]))
        negs = np.atleast_2d(negs)
        object.__setattr__(self, "query", q)
        object.__setattr__(self, "positive_key", pos)
        object.__setattr__(self, "negative_keys", negs)
        if q.ndim != 1 or pos.shape != q.shape or negs.shape[1:] != q.shape:
            raise ValueError(
                f"dimension mismatch: query {q.shape}, positive {pos.shape}, negatives {negs.shape}"
            )
        if check:
            _check_unit_rows(q, "query")
            _check_unit_rows(pos, "positive key")
            if self.n_negatives:
                _check_unit_rows(negs, "negative keys")

    @property
    def dim(self) -> int:
        return self.query.shape[0]

    @property
    def n_negatives(self) -> int:
        return self.negative_keys.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, dim: int, n_negatives: int) -> "ContrastiveInstance":
        """Uniformly random unit query, positive, and negatives."""
        vecs = numerics.random_unit_vectors(rng, n_negatives + 2, dim)
        return cls(vecs[0], vecs[1], vecs[2:])


@dataclass(frozen=True)
class DualTempConfig:
    """Temperatures for the vector (intra-anchor) and scalar (inter-anchor)
    components: ``tau_alpha`` governs repulsion weights within an anchor,
    ``tau_beta`` the attraction weight across anchors."""

    tau_alpha: float
    tau_beta: float

    def __post_init__(self):
        if self.tau_alpha <= 0.0 or self.tau_beta <= 0.0:
            raise ValueError(f"temperatures must be positive, got {self.tau_alpha}, {self.tau_beta}")

    @property
    def single_temperature(self) -> bool:
        return self.tau_alpha == self.tau_beta


@dataclass(frozen=True)
class BatchPair:
    """Two aligned views of a batch: queries[i] and keys[i] are positives of
    each other, every other cross pairing is negative."""

    queries: np.ndarray
    keys: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check: bool):
        q = np.atleast_2d(numerics.as_vector(self.queries))
        k = np.atleast_2d(numerics.as_vector(self.keys))
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "keys", k)
        if q.shape != k.shape:
            raise ValueError(f"view shapes differ: {q.shape} vs {k.shape}")
        if q.shape[0] < 2:
            raise ValueError("batch needs at least 2 pairs; a single pair has no negatives")
        if check:
            _check_unit_rows(q, "queries")
            _check_unit_rows(k, "keys")

    @property
    def size(self) -> int:
        return self.queries.shape[0]

    def swapped(self) -> "BatchPair":
        return BatchPair(self.keys, self.queries, check=False)

    @classmethod
    def random(cls, rng: np.random.Generator, size: int, dim: int) -> "BatchPair":
        return cls(
            numerics.random_unit_vectors(rng, size, dim),
            numerics.random_unit_vectors(rng, size, dim),
        )


@dataclass(frozen=True)
class DTWeightFactor:
    """Per-anchor off-diagonal probability masses at the two temperatures.

    ``ratio`` is the frozen multiplier that rewrites the anchor's scalar
    component from tau_alpha to tau_beta; it is a constant under
    differentiation.
    """

    w_alpha: float
    w_beta: float
    ratio: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.w_alpha < 1.0 and 0.0 < self.w_beta < 1.0):
            raise ValueError(f"weight factors must lie in (0, 1), got {self.w_alpha}, {self.w_beta}")
        object.__setattr__(self, "ratio", self.w_beta / self.w_alpha)


@dataclass(frozen=True)
class LogitInstance:
    """Unnormalized logit vector with its ground-truth class index."""

    logits: np.ndarray
    gt_index: int

    def __post_init__(self):
        o = numerics.as_vector(self.logits)
        object.__setattr__(self, "logits", o)
        if o.ndim != 1 or o.shape[0] < 2:
            raise ValueError(f"need a 1-D logit vector with >= 2 classes, got shape {o.shape}")
        if not 0 <= self.gt_index < o.shape[0]:
            raise ValueError(f"gt_index {self.gt_index} out of range [0, {o.shape[0]})")

    @property
    def n_classes(self) -> int:
        return self.logits.shape[0]


def _instance_logits(inst: ContrastiveInstance) -> np.ndarray:
    """Similarities [q.k+, q.k_1, ..., q.k_K]; positive first."""
    s_pos = float(inst.query @ inst.positive_key)
    if inst.n_negatives == 0:
        return np.array([s_pos])
    return np.concatenate(([s_pos], inst.negative_keys @ inst.query))


def infonce_loss(inst: ContrastiveInstance, tau: float) -> float:
    """Softmax contrastive loss of one anchor against its K negatives.

    K = 0 degenerates to 0: the denominator holds only the positive term.
    """
    log_p = numerics.tempered_log_softmax(_instance_logits(inst), tau)
    return max(0.0, float(-log_p[0]))


def simple_loss(inst: ContrastiveInstance) -> float:
    """Uniform-weight attract/repulse loss: -q.k+ + mean_j q.k_j."""
    if inst.n_negatives == 0:
        raise ValueError("simple loss needs at least one negative key")
    return float(-(inst.query @ inst.positive_key) + np.mean(inst.negative_keys @ inst.query))


def _scalar_factor(inst: ContrastiveInstance, tau: float) -> float:
    """Off-positive softmax mass sum_j p_j, with the positive in the denominator."""
    p = numerics.tempered_softmax(_instance_logits(inst), tau)
    return float(np.sum(p[1:]))


def _vector_factor(inst: ContrastiveInstance, tau: float) -> np.ndarray:
    """k+ minus the normalized-weight combination of negatives.

    The normalized weights p_hat reduce to a softmax over the negatives
    alone: the positive term cancels from numerator and denominator.
    """
    p_hat = numerics.tempered_softmax(inst.negative_keys @ inst.query, tau)
    return inst.positive_key - p_hat @ inst.negative_keys


def decomposed_loss(
    inst_scalar: ContrastiveInstance,
    inst_vector: ContrastiveInstance,
    cfg: DualTempConfig,
) -> tuple[float, np.ndarray]:
    """Stop-gradient decomposed loss with independent negative sets.

    The scalar factor (anchor attraction weight) is evaluated at tau_beta
    over ``inst_scalar``'s negatives and frozen; the vector factor is
    evaluated at tau_alpha over ``inst_vector``'s negatives and frozen;
    the loss is linear in the bare query. Returns ``(value, grad)`` where
    ``grad = -(1/tau_alpha) * scalar * vector`` is the induced gradient on
    the query (the 1/tau constant is kept, not absorbed into the learning
    rate) and ``value = grad . q``.
    """
    if inst_scalar.n_negatives == 0 or inst_vector.n_negatives == 0:
        raise ValueError("decomposed loss needs at least one negative key per component")
    if not (
        np.allclose(inst_scalar.query, inst_vector.query, atol=1e-9)
        and np.allclose(inst_scalar.positive_key, inst_vector.positive_key, atol=1e-9)
    ):
        raise ValueError("scalar and vector instances must share query and positive key")
    scalar = _scalar_factor(inst_scalar, cfg.tau_beta)
    vector = _vector_factor(inst_vector, cfg.tau_alpha)
    grad = -(scalar / cfg.tau_alpha) * vector
    return float(grad @ inst_scalar.query), grad


def _dt_direction(sims: np.ndarray, cfg: DualTempConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """One direction of the dual-temperature batch loss.

    ``sims[i, j]`` is anchor i against key j; positives sit on the
    diagonal. Returns (mean loss, per-anchor losses, grad wrt sims). The
    weight ratio is computed from off-diagonal masses and frozen.
    """
    n = sims.shape[0]
    log_p_alpha = numerics.tempered_log_softmax(sims, cfg.tau_alpha)
    p_alpha = np.exp(log_p_alpha)
    p_beta = numerics.tempered_softmax(sims, cfg.tau_beta)
    off = ~np.eye(n, dtype=bool)
    w_alpha = np.sum(p_alpha * off, axis=1)
    w_beta = np.sum(p_beta * off, axis=1)
    if np.any(w_alpha == 0.0):
        raise ValueError("off-diagonal mass underflowed at tau_alpha; temperature too small")
    ratio = w_beta / w_alpha
    per_anchor = -ratio * np.diag(log_p_alpha)
    grad_sims = (ratio[:, None] * (p_alpha - np.eye(n))) / (n * cfg.tau_alpha)
    return float(np.mean(per_anchor)), per_anchor, grad_sims


def dt_weight_factors(batch: BatchPair, cfg: DualTempConfig) -> list[DTWeightFactor]:
    """Per-anchor weight factors of the query direction."""
    sims = batch.queries @ batch.keys.T
    n = batch.size
    off = ~np.eye(n, dtype=bool)
    w_alpha = np.sum(numerics.tempered_softmax(sims, cfg.tau_alpha) * off, axis=1)
    w_beta = np.sum(numerics.tempered_softmax(sims, cfg.tau_beta) * off, axis=1)
    return [DTWeightFactor(float(a), float(b)) for a, b in zip(w_alpha, w_beta)]


def dt_loss(batch: BatchPair, cfg: DualTempConfig, symmetric: bool = False) -> float:
    """Dual-temperature batch loss.

    Per anchor: the tempered log-softmax term at tau_alpha, scaled by the
    frozen ratio W_beta/W_alpha that swaps the scalar component's
    temperature to tau_beta. ``symmetric`` averages with the key-anchored
    direction (roles of q and k swapped).
    """
    loss, _, _ = _dt_direction(batch.queries @ batch.keys.T, cfg)
    if not symmetric:
        return loss
    loss_k, _, _ = _dt_direction(batch.keys @ batch.queries.T, cfg)
    return 0.5 * (loss + loss_k)


def dt_loss_with_grads(
    batch: BatchPair, cfg: DualTempConfig, symmetric: bool = False
) -> tuple[float, np.ndarray, np.ndarray]:
    """dt_loss plus its analytic gradients on queries and keys.

    Gradients flow through both views (no momentum side); the weight
    ratio stays frozen.
    """
    sims = batch.queries @ batch.keys.T
    loss_q, _, g = _dt_direction(sims, cfg)
    grad_q = g @ batch.keys
    grad_k = g.T @ batch.queries
    if not symmetric:
        return loss_q, grad_q, grad_k
    loss_k, _, g2 = _dt_direction(sims.T, cfg)
    grad_q = 0.5 * (grad_q + g2.T @ batch.keys)
    grad_k = 0.5 * (grad_k + g2 @ batch.queries)
    return 0.5 * (loss_q + loss_k), grad_q, grad_k


def batch_infonce_loss(batch: BatchPair, tau: float) -> float:
    """Plain tempered batch loss: mean over anchors of -log softmax diag.

    Shares the softmax code path with dt_loss, so dt_loss with equal
    temperatures reproduces it bitwise.
    """
    log_p = numerics.tempered_log_softmax(batch.queries @ batch.keys.T, tau)
    return float(np.mean(-np.diag(log_p)))


def noncl_loss(predicted, target_key, ha_factor: float | None = None) -> float:
    """Negative alignment of a predicted vector with a constant target.

    ``predicted`` is l2-normalized here; ``target_key`` is used as given
    and treated as a constant (the stop-gradient side). An optional frozen
    ``ha_factor`` scales the loss, reintroducing inter-anchor
    hardness-awareness.
    """
    predicted = numerics.as_vector(predicted)
    target_key = numerics.as_vector(target_key)
    if predicted.shape != target_key.shape:
        raise ValueError(f"dimension mismatch: {predicted.shape} vs {target_key.shape}")
    loss = float(-numerics.l2_normalize(predicted) @ target_key)
    return loss if ha_factor is None else float(ha_factor) * loss


def noncl_loss_grad(predicted, target_key, ha_factor: float | None = None) -> np.ndarray:
    """Gradient of noncl_loss w.r.t. the raw (pre-normalization) prediction."""
    predicted = numerics.as_vector(predicted)
    target_key = numerics.as_vector(target_key)
    unit = numerics.l2_normalize(predicted)
    norm = float(np.linalg.norm(predicted))
    grad = -(target_key - unit * (unit @ target_key)) / norm
    return grad if ha_factor is None else float(ha_factor) * grad


def ce_loss(inst: LogitInstance, tau: float = 1.0) -> float:
    """Tempered cross-entropy on unnormalized logits."""
    log_p = numerics.tempered_log_softmax(inst.logits, tau)
    return max(0.0, float(-log_p[inst.gt_index]))


def _ce_off_gt_mass(inst: LogitInstance, tau: float) -> float:
    p = numerics.tempered_softmax(inst.logits, tau)
    return float(np.sum(p) - p[inst.gt_index])


def ce_dt_loss(inst: LogitInstance, cfg: DualTempConfig) -> float:
    """Cross-entropy with the frozen dual-temperature weight ratio.

    Exactly the dt_loss construction with one-hot basis vectors as keys:
    the off-ground-truth mass plays the role of the off-diagonal mass.
    """
    w_alpha = _ce_off_gt_mass(inst, cfg.tau_alpha)
    if w_alpha == 0.0:
        raise ValueError("off-ground-truth mass underflowed at tau_alpha")
    ratio = _ce_off_gt_mass(inst, cfg.tau_beta) / w_alpha
    return ratio * ce_loss(inst, cfg.tau_alpha)


def ce_dt_grad(inst: LogitInstance, cfg: DualTempConfig) -> np.ndarray:
    """Gradient of ce_dt_loss w.r.t. the logits (weight ratio frozen)."""
    w_alpha = _ce_off_gt_mass(inst, cfg.tau_alpha)
    ratio = _ce_off_gt_mass(inst, cfg.tau_beta) / w_alpha
    p = numerics.tempered_softmax(inst.logits, cfg.tau_alpha)
    p[inst.gt_index] -= 1.0
    return ratio * p / cfg.tau_alpha


def one_hot_instance(inst: LogitInstance) -> ContrastiveInstance:
    """View a logit instance as a contrastive one over one-hot keys.

    The logit vector is the (unnormalized) query, the ground-truth basis
    vector the positive key, and the other basis vectors the negatives;
    dot products recover the logits, so cross-entropy coincides with
    infonce_loss on this instance.
    """
    eye = np.eye(inst.n_classes)
    others = np.delete(np.arange(inst.n_classes), inst.gt_index)
    return ContrastiveInstance(inst.logits, eye[inst.gt_index], eye[others], check=False)
