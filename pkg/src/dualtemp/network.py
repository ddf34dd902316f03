"""Tiny MLP encoder with explicit reverse-mode gradients.

The layer vocabulary is fixed: affine transforms, ReLU, and a final
l2-normalization onto the unit sphere. Backward passes are hand-written
per layer (no autodiff), so every gradient can be checked against finite
differences. The encoder is a stand-in for a full vision backbone: a
ReLU backbone producing features for linear evaluation, followed by a
two-layer projector whose normalized output is the embedding.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import numerics

__all__ = [
    "Affine",
    "EncoderParams",
    "EncodeResult",
    "encode",
    "encode_backward",
    "chain_forward",
    "chain_backward",
    "init_encoder",
    "init_predictor",
    "tree_map",
    "zeros_like_params",
    "flatten_params",
    "unflatten_params",
]


@dataclass(frozen=True)
class Affine:
    """x -> x @ weight.T + bias, with weight of shape (out, in)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"affine shapes inconsistent: weight {w.shape}, bias {b.shape}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def _check_chain(layers, what: str) -> None:
    for a, b in zip(layers, layers[1:]):
        if b.in_dim != a.out_dim:
            raise ValueError(f"{what} dimensions do not chain: {a.out_dim} -> {b.in_dim}")


@dataclass(frozen=True)
class EncoderParams:
    """Backbone (ReLU after every affine) plus projector (ReLU between
    affines only); the projector output is l2-normalized downstream."""

    backbone: tuple
    projector: tuple

    def __post_init__(self):
        object.__setattr__(self, "backbone", tuple(self.backbone))
        object.__setattr__(self, "projector", tuple(self.projector))
        if not self.projector:
            raise ValueError("projector needs at least one affine layer")
        _check_chain(self.backbone + self.projector, "encoder")

    @property
    def input_dim(self) -> int:
        return (self.backbone or self.projector)[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.backbone[-1].out_dim if self.backbone else self.projector[0].in_dim

    @property
    def embedding_dim(self) -> int:
        return self.projector[-1].out_dim


def chain_forward(layers, x: np.ndarray, relu_after_last: bool):
    """Run affine layers with ReLU between them (and after the last one
    if requested). Returns (output, caches)."""
    h = x
    caches = []
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        if h.shape[-1] != layer.in_dim:
            raise ValueError(f"input dim {h.shape[-1]} does not match layer in_dim {layer.in_dim}")
        z = h @ layer.weight.T + layer.bias
        caches.append((h, z))
        h = np.maximum(z, 0.0) if (i < last or relu_after_last) else z
    return h, caches


def chain_backward(layers, caches, d_out: np.ndarray, relu_after_last: bool):
    """Reverse of chain_forward. Returns (per-layer Affine grads, d_input)."""
    if len(caches) != len(layers):
        raise ValueError(f"cache holds {len(caches)} layers, params hold {len(layers)}")
    grads = [None] * len(layers)
    d = d_out
    last = len(layers) - 1
    for i in range(last, -1, -1):
        inp, z = caches[i]
        if inp.shape[-1] != layers[i].in_dim:
            raise ValueError("cache does not match these parameters")
        if i < last or relu_after_last:
            d = d * (z > 0.0)
        grads[i] = Affine(d.T @ inp, np.sum(d, axis=0))
        d = d @ layers[i].weight
    return tuple(grads), d


@dataclass(frozen=True)
class EncodeResult:
    features: np.ndarray
    pre_norm: np.ndarray
    embeddings: np.ndarray
    cache: tuple


def encode(params: EncoderParams, x: np.ndarray) -> EncodeResult:
    """Forward pass: backbone features, raw projector output, and the
    l2-normalized embeddings, with caches for the backward pass."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    features, backbone_cache = chain_forward(params.backbone, x, relu_after_last=True)
    pre_norm, projector_cache = chain_forward(params.projector, features, relu_after_last=False)
    embeddings = numerics.l2_normalize_rows(pre_norm)
    return EncodeResult(features, pre_norm, embeddings, (backbone_cache, projector_cache))


def normalize_backward(pre_norm: np.ndarray, embeddings: np.ndarray, d_emb: np.ndarray) -> np.ndarray:
    """Jacobian of row-wise z/|z|: project out the radial component, then
    scale by 1/|z|."""
    norms = np.linalg.norm(pre_norm, axis=1, keepdims=True)
    radial = np.sum(embeddings * d_emb, axis=1, keepdims=True)
    return (d_emb - embeddings * radial) / norms


def encode_backward(params: EncoderParams, result: EncodeResult, d_embeddings: np.ndarray):
    """Gradients of a loss on the normalized embeddings. Returns
    (EncoderParams-shaped grads, d_input)."""
    backbone_cache, projector_cache = result.cache
    d_pre = normalize_backward(result.pre_norm, result.embeddings, d_embeddings)
    proj_grads, d_features = chain_backward(params.projector, projector_cache, d_pre, relu_after_last=False)
    back_grads, d_input = chain_backward(params.backbone, backbone_cache, d_features, relu_after_last=True)
    return EncoderParams(back_grads, proj_grads), d_input


def _he_affine(
    rng: np.random.Generator, in_dim: int, out_dim: int, gain: float = 2.0, bias: float = 0.01
) -> Affine:
    # the small positive bias keeps ReLU rows alive at init; an all-dead
    # feature row would otherwise reach the normalizer as an exact zero
    scale = np.sqrt(gain / in_dim)
    return Affine(rng.normal(scale=scale, size=(out_dim, in_dim)), np.full(out_dim, bias))


def init_encoder(
    rng: np.random.Generator,
    in_dim: int,
    hidden_dim: int,
    embedding_dim: int,
    backbone_layers: int = 2,
) -> EncoderParams:
    """He-scaled random encoder: `backbone_layers` ReLU affines into a
    two-layer projector."""
    dims = [in_dim] + [hidden_dim] * backbone_layers
    backbone = tuple(_he_affine(rng, a, b) for a, b in zip(dims, dims[1:]))
    projector = (
        _he_affine(rng, hidden_dim if backbone_layers else in_dim, hidden_dim),
        _he_affine(rng, hidden_dim, embedding_dim, gain=1.0, bias=0.0),
    )
    return EncoderParams(backbone, projector)


def init_predictor(rng: np.random.Generator, embedding_dim: int, hidden_dim: int) -> tuple:
    """Two-layer prediction head on embeddings (ReLU between layers)."""
    return (
        _he_affine(rng, embedding_dim, hidden_dim),
        _he_affine(rng, hidden_dim, embedding_dim, gain=1.0, bias=0.0),
    )


def tree_map(fn, *trees):
    """Apply fn leafwise over parallel parameter trees of arrays."""
    head = trees[0]
    if isinstance(head, np.ndarray):
        return fn(*trees)
    if dataclasses.is_dataclass(head) and not isinstance(head, type):
        fields = {
            f.name: tree_map(fn, *(getattr(t, f.name) for t in trees))
            for f in dataclasses.fields(head)
            if f.init
        }
        return dataclasses.replace(head, **fields)
    if isinstance(head, (list, tuple)):
        mapped = [tree_map(fn, *parts) for parts in zip(*trees)]
        return tuple(mapped) if isinstance(head, tuple) else mapped
    raise TypeError(f"unsupported parameter leaf type {type(head)}")


def zeros_like_params(tree):
    return tree_map(np.zeros_like, tree)


def flatten_params(tree) -> np.ndarray:
    """Concatenate every leaf into one flat vector (FD plumbing)."""
    leaves: list[np.ndarray] = []
    tree_map(lambda a: leaves.append(a.ravel()) or a, tree)
    return np.concatenate(leaves) if leaves else np.zeros(0)


def unflatten_params(template, flat: np.ndarray):
    """Inverse of flatten_params against a structural template."""
    flat = np.asarray(flat, dtype=np.float64)
    needed = flatten_params(template).size
    if flat.size != needed:
        raise ValueError(f"flat vector holds {flat.size} values, template needs {needed}")
    offset = 0

    def take(a: np.ndarray) -> np.ndarray:
        nonlocal offset
        chunk = flat[offset : offset + a.size]
        offset += a.size
        return chunk.reshape(a.shape)

    return tree_map(take, template)
