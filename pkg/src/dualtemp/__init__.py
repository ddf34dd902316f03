"""Numerical laboratory for contrastive self-supervised losses."""

from . import analysis, cli, datasets, dictionary, estimator, gradients, losses, network, numerics, trainer

__all__ = [
    "numerics",
    "losses",
    "gradients",
    "dictionary",
    "network",
    "trainer",
    "analysis",
    "datasets",
    "estimator",
    "cli",
]
