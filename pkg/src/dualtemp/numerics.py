"""Elementary vector math shared by every other module.

Everything here is double precision and pure: normalization, tempered
softmax, entropy, cosine similarity, and seedable counter-based RNG
streams. No operation may emit NaN/Inf silently; degenerate inputs raise.
"""

import numpy as np

__all__ = [
    "as_vector",
    "l2_normalize",
    "l2_normalize_rows",
    "tempered_softmax",
    "tempered_log_softmax",
    "entropy",
    "cosine_similarity",
    "make_rng",
    "random_unit_vectors",
]


def as_vector(v) -> np.ndarray:
    """Coerce to a float64 array without copying when already one."""
    return np.asarray(v, dtype=np.float64)


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction.

    Raises ValueError on zero (or non-finite) norm rather than dividing
    through to NaN.
    """
    v = as_vector(v)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError(f"cannot normalize vector with norm {norm}")
    return v / norm


def l2_normalize_rows(m) -> np.ndarray:
    """Row-wise unit normalization of a 2-D array."""
    m = as_vector(m)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D array, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        raise ValueError("cannot normalize rows with zero or non-finite norm")
    return m / norms


def tempered_softmax(logits, tau: float) -> np.ndarray:
    """Softmax of logits/tau, stabilized by max subtraction.

    Works on 1-D vectors or row-wise on 2-D arrays.
    """
    x = _scaled_logits(logits, tau)
    x = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(x)
    return e / np.sum(e, axis=-1, keepdims=True)


def tempered_log_softmax(logits, tau: float) -> np.ndarray:
    """Log of tempered_softmax, accurate for probabilities near 1."""
    x = _scaled_logits(logits, tau)
    x = x - np.max(x, axis=-1, keepdims=True)
    return x - np.log(np.sum(np.exp(x), axis=-1, keepdims=True))


def _scaled_logits(logits, tau: float) -> np.ndarray:
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    x = as_vector(logits)
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    return x / tau


def entropy(p) -> float:
    """Shannon entropy in nats, with the 0*log(0) := 0 convention."""
    p = as_vector(p)
    if np.any(p < -1e-12) or abs(float(np.sum(p)) - 1.0) > 1e-6:
        raise ValueError("entropy expects a probability vector")
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors, in [-1, 1]."""
    dot = float(np.dot(l2_normalize(a), l2_normalize(b)))
    return min(1.0, max(-1.0, dot))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded Philox generator; counter-based, bit-stable across platforms.

    Distinct ``stream`` values give independent streams from one seed, so
    parallel work (seed sweeps, queue sampling vs. data shuffling) never
    shares state.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(stream)))))


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Draw n vectors uniformly from the unit sphere in R^dim."""
    return l2_normalize_rows(rng.standard_normal((n, dim)))
