"""Data sources for the training harness: a synthetic two-view dataset
(the desk-scale stand-in for image augmentation), a CIFAR binary reader,
and label-noise injection.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics

__all__ = [
    "SyntheticSpec",
    "PairDataset",
    "generate_synthetic_pairs",
    "load_cifar_binary",
    "inject_label_noise",
    "CIFAR_RECORD_SIZES",
]

CIFAR_RECORD_SIZES = {"cifar10": 3073, "cifar100": 3074}


@dataclass(frozen=True)
class SyntheticSpec:
    """Class centers on the unit sphere; each sample's two views are the
    center plus independent Gaussian noise."""

    classes: int = 32
    dim: int = 64
    samples: int = 4096
    noise_scale: float = 0.1

    def __post_init__(self):
        if self.classes < 2 or self.dim < 2:
            raise ValueError(f"need classes >= 2 and dim >= 2, got {self.classes}, {self.dim}")
        if self.samples < 1 or self.noise_scale < 0.0:
            raise ValueError(f"invalid samples {self.samples} or noise scale {self.noise_scale}")


@dataclass(frozen=True)
class PairDataset:
    view1: np.ndarray
    view2: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (self.view1.shape == self.view2.shape and self.view1.shape[0] == self.labels.shape[0]):
            raise ValueError("views and labels must agree on sample count")

    @property
    def size(self) -> int:
        return self.labels.shape[0]


def generate_synthetic_pairs(spec: SyntheticSpec, rng: np.random.Generator) -> PairDataset:
    centers = numerics.random_unit_vectors(rng, spec.classes, spec.dim)
    labels = rng.integers(0, spec.classes, size=spec.samples)
    base = centers[labels]
    view1 = base + spec.noise_scale * rng.normal(size=base.shape)
    view2 = base + spec.noise_scale * rng.normal(size=base.shape)
    return PairDataset(view1, view2, labels.astype(np.int64))


def load_cifar_binary(path, variant: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a CIFAR binary-format file into ([0,1] pixel rows, labels).

    cifar10 records are 1 label byte + 3072 pixel bytes; cifar100 has a
    coarse and a fine label byte, and the fine label is kept.
    """
    if variant not in CIFAR_RECORD_SIZES:
        raise ValueError(f"unknown variant {variant!r}, expected one of {sorted(CIFAR_RECORD_SIZES)}")
    record = CIFAR_RECORD_SIZES[variant]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % record != 0:
        raise ValueError(
            f"{path} holds {raw.size} bytes, not a positive multiple of the "
            f"{record}-byte {variant} record size"
        )
    rows = raw.reshape(-1, record)
    label_col = 0 if variant == "cifar10" else 1
    labels = rows[:, label_col].astype(np.int64)
    pixels = rows[:, record - 3072 :].astype(np.float64) / 255.0
    return pixels, labels


def inject_label_noise(labels: np.ndarray, kind: str, eta: float, rng: np.random.Generator, n_classes: int | None = None) -> np.ndarray:
    """Corrupt labels: symmetric replaces with a uniformly random other
    class, asymmetric maps c to (c+1) mod C; both with probability eta."""
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"noise ratio must lie in [0, 1), got {eta}")
    if kind not in ("symmetric", "asymmetric"):
        raise ValueError(f"unknown noise kind {kind!r}")
    labels = np.asarray(labels, dtype=np.int64)
    c = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    out = labels.copy()
    flip = rng.random(labels.shape[0]) < eta
    if kind == "symmetric":
        # uniform over the other C-1 classes: shift by 1..C-1
        shift = rng.integers(1, c, size=labels.shape[0])
        out[flip] = (labels[flip] + shift[flip]) % c
    else:
        out[flip] = (labels[flip] + 1) % c
    return out
