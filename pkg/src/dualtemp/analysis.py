"""Diagnostics for inter-anchor weighting: the relative penalty profile
r_plus, its entropy, its stability under key resampling, and a collapse
statistic.

r_plus over a batch of anchors is each anchor's attraction weight
(scalar_sum) normalized by the batch total; its entropy measures how
unevenly the loss attends to anchors. All sweeps pair their draws: one
embedding sample per seed is reused across every dictionary size (as
prefixes of one key pool) and every temperature, so sweep comparisons
are within-seed.
"""

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics
from .losses import BatchPair

__all__ = [
    "RPlusProfile",
    "SweepRow",
    "r_plus",
    "r_plus_in_batch",
    "r_plus_similarity",
    "aligned_positives",
    "random_key_source",
    "collapse_stat",
    "entropy_sweep",
    "similarity_sweep",
    "write_sweep_csv",
    "mean_by_cell",
]


@dataclass(frozen=True)
class RPlusProfile:
    """Relative penalty weights r_plus (sums to 1), their entropy in
    nats, and the configuration they were computed under."""

    r_plus: np.ndarray
    entropy: float
    n_anchors: int
    n_negatives: int
    tau: float


@dataclass(frozen=True)
class SweepRow:
    K: int
    tau: float
    seed: int
    value: float


def _scalar_sums(queries: np.ndarray, pos_dots: np.ndarray, negatives: np.ndarray, tau: float) -> np.ndarray:
    """Per-anchor off-positive softmax mass, positive in the denominator.

    negatives may be one shared (K, d) dictionary or per-anchor (N, K, d).
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if negatives.ndim == 2:
        sims = queries @ negatives.T
    elif negatives.ndim == 3:
        sims = np.einsum("nd,nkd->nk", queries, negatives)
    else:
        raise ValueError(f"negatives must be (K, d) or (N, K, d), got shape {negatives.shape}")
    if sims.shape[1] == 0:
        raise ValueError("every anchor needs at least one negative")
    scaled = sims / tau
    scaled_pos = pos_dots / tau
    m = np.maximum(np.max(scaled, axis=1), scaled_pos)
    neg_mass = np.sum(np.exp(scaled - m[:, None]), axis=1)
    pos_mass = np.exp(scaled_pos - m)
    return neg_mass / (neg_mass + pos_mass)


def _profile(scalar_sums: np.ndarray, n_negatives: int, tau: float) -> RPlusProfile:
    r = scalar_sums / np.sum(scalar_sums)
    return RPlusProfile(r, numerics.entropy(r), r.shape[0], n_negatives, tau)


def r_plus(queries, positives, negatives, tau: float) -> RPlusProfile:
    """Relative penalty profile of N anchors against a key source.

    queries and positives are (N, d); negatives are a shared (K, d)
    dictionary or per-anchor (N, K, d) sets.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.asarray(negatives, dtype=np.float64)
    if queries.shape[0] < 2:
        raise ValueError("r_plus needs at least 2 anchors")
    if positives.shape != queries.shape:
        raise ValueError(f"positives shape {positives.shape} does not match queries {queries.shape}")
    pos_dots = np.sum(queries * positives, axis=1)
    sums = _scalar_sums(queries, pos_dots, negatives, tau)
    return _profile(sums, negatives.shape[-2], tau)


def r_plus_in_batch(batch: BatchPair, tau: float) -> RPlusProfile:
    """r_plus where anchor i's negatives are the other keys of the batch;
    its scalar_sum is then exactly the off-diagonal softmax mass."""
    p = numerics.tempered_softmax(batch.queries @ batch.keys.T, tau)
    off = ~np.eye(batch.size, dtype=bool)
    return _profile(np.sum(p * off, axis=1), batch.size - 1, tau)


def aligned_positives(queries: np.ndarray, alignment: float, rng: np.random.Generator) -> np.ndarray:
    """Positives at an exact cosine `alignment` to their queries, with the
    orthogonal component drawn at random (the geometry of a trained
    encoder: alignment stable, direction resampled)."""
    if not -1.0 < alignment < 1.0:
        raise ValueError(f"alignment must lie in (-1, 1), got {alignment}")
    raw = rng.normal(size=queries.shape)
    raw -= queries * np.sum(raw * queries, axis=1, keepdims=True)
    ortho = numerics.l2_normalize_rows(raw)
    return alignment * queries + np.sqrt(1.0 - alignment * alignment) * ortho


def random_key_source(n_negatives: int, alignment: float | None = 0.9) -> Callable:
    """Key source for resampling studies: negatives uniform on the sphere,
    positives either at fixed alignment (default) or fully random."""

    def draw(queries: np.ndarray, rng: np.random.Generator):
        n, dim = queries.shape
        if alignment is None:
            positives = numerics.random_unit_vectors(rng, n, dim)
        else:
            positives = aligned_positives(queries, alignment, rng)
        return positives, numerics.random_unit_vectors(rng, n_negatives, dim)

    return draw


def r_plus_similarity(queries, key_source: Callable, tau: float, rng: np.random.Generator) -> float:
    """Cosine similarity of two r_plus profiles under independently
    redrawn positive and negative keys; near 1 when the profile is a
    stable property of the anchors rather than of the key draw."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    profiles = []
    for _ in range(2):
        positives, negatives = key_source(queries, rng)
        profiles.append(r_plus(queries, positives, negatives, tau).r_plus)
    return numerics.cosine_similarity(profiles[0], profiles[1])


def collapse_stat(embeddings) -> float:
    """Mean pairwise cosine similarity after row normalization; 1.0 means
    every embedding points the same way (full collapse)."""
    z = numerics.l2_normalize_rows(np.atleast_2d(np.asarray(embeddings, dtype=np.float64)))
    n = z.shape[0]
    if n < 2:
        raise ValueError("collapse statistic needs at least 2 embeddings")
    gram = np.clip(z @ z.T, -1.0, 1.0)
    return float((np.sum(gram) - n) / (n * (n - 1)))


def entropy_sweep(
    dict_sizes,
    taus,
    n_anchors: int = 256,
    dim: int = 32,
    seeds: int = 20,
    base_seed: int = 0,
) -> list[SweepRow]:
    """Mean r_plus entropy over random unit embeddings for every (K, tau)
    cell. One row per (K, tau, seed)."""
    dict_sizes = sorted(int(k) for k in dict_sizes)
    rows = []
    for seed in range(base_seed, base_seed + seeds):
        rng = numerics.make_rng(seed, stream=1)
        queries = numerics.random_unit_vectors(rng, n_anchors, dim)
        positives = numerics.random_unit_vectors(rng, n_anchors, dim)
        pool = numerics.random_unit_vectors(rng, max(dict_sizes), dim)
        pos_dots = np.sum(queries * positives, axis=1)
        for k in dict_sizes:
            for tau in taus:
                sums = _scalar_sums(queries, pos_dots, pool[:k], float(tau))
                value = _profile(sums, k, float(tau)).entropy
                rows.append(SweepRow(k, float(tau), seed, value))
    return rows


def similarity_sweep(
    dict_sizes,
    tau: float = 0.1,
    n_anchors: int = 256,
    dim: int = 32,
    seeds: int = 20,
    alignment: float | None = 0.9,
    base_seed: int = 0,
) -> list[SweepRow]:
    """Mean r_plus resampling similarity per dictionary size; queries are
    drawn once per seed and shared across sizes."""
    rows = []
    for seed in range(base_seed, base_seed + seeds):
        rng = numerics.make_rng(seed, stream=2)
        queries = numerics.random_unit_vectors(rng, n_anchors, dim)
        for k in dict_sizes:
            value = r_plus_similarity(queries, random_key_source(int(k), alignment), tau, rng)
            rows.append(SweepRow(int(k), float(tau), seed, value))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "tau", "seed", "value"])
        for row in rows:
            writer.writerow([row.K, row.tau, row.seed, repr(row.value)])


def mean_by_cell(rows) -> dict:
    """Mean value per (K, tau) cell, for trend checks and summaries."""
    cells: dict = {}
    for row in rows:
        cells.setdefault((row.K, row.tau), []).append(row.value)
    return {cell: float(np.mean(vals)) for cell, vals in cells.items()}
