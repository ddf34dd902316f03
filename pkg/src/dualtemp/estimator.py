"""Scikit-learn wrapper around the self-supervised training harness.

ContrastiveEncoder treats rows of X as samples, manufactures two noisy
views per row (the stand-in for augmentation), pretrains the configured
framework, and serves the frozen backbone features through transform.
Labels are optional; when given they feed the online linear probe, which
then backs predict and score.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import network, numerics, trainer
from .datasets import PairDataset
from .losses import DualTempConfig
from .trainer import FRAMEWORKS, FrameworkSpec, ScheduleConfig


class ContrastiveEncoder(TransformerMixin, BaseEstimator):
    """Self-supervised feature extractor with a fit/transform interface.

    Parameters mirror the harness configuration; all are stored verbatim
    so the estimator clones cleanly. fit draws two Gaussian-jittered
    views per sample, splits off an internal evaluation fold, and trains
    the chosen framework for `epochs` epochs. transform returns backbone
    features (pre-projector); embed returns the normalized embeddings
    the loss saw.
    """

    def __init__(
        self,
        framework: str = "simco",
        tau_alpha: float = 0.1,
        tau_beta: float = 1.0,
        embedding_dim: int = 32,
        hidden_dim: int = 64,
        epochs: int = 30,
        batch_size: int = 128,
        base_lr: float = 0.03,
        warmup_epochs: int = 3,
        weight_decay: float = 5e-4,
        sgd_momentum: float = 0.9,
        linear_scaling: bool = True,
        momentum: float = 0.99,
        queue_scalar: int = 1024,
        queue_vector: int = 1024,
        sampling: str = "newest",
        symmetric: bool = False,
        ha_toggle: bool = False,
        view_noise: float = 0.1,
        random_state: int | None = 0,
    ):
        self.framework = framework
        self.tau_alpha = tau_alpha
        self.tau_beta = tau_beta
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.weight_decay = weight_decay
        self.sgd_momentum = sgd_momentum
        self.linear_scaling = linear_scaling
        self.momentum = momentum
        self.queue_scalar = queue_scalar
        self.queue_vector = queue_vector
        self.sampling = sampling
        self.symmetric = symmetric
        self.ha_toggle = ha_toggle
        self.view_noise = view_noise
        self.random_state = random_state

    def _seed(self) -> int:
        return 0 if self.random_state is None else int(self.random_state)

    def _framework_spec(self) -> FrameworkSpec:
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.framework!r}, expected one of {FRAMEWORKS}")
        # st-simco pins both temperatures to tau_alpha by definition
        beta = self.tau_alpha if self.framework == "st-simco" else self.tau_beta
        return FrameworkSpec(
            name=self.framework,
            dt=DualTempConfig(self.tau_alpha, beta),
            symmetric=self.symmetric,
            momentum=self.momentum,
            queue_scalar=self.queue_scalar,
            queue_vector=self.queue_vector,
            sample_scalar=min(128, self.queue_scalar),
            sample_vector=min(128, self.queue_vector),
            sampling=self.sampling,
            ha_toggle=self.ha_toggle,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if n < 3:
            raise ValueError(f"need at least 3 samples (one eval, one training batch of 2), got {n}")
        if self.view_noise < 0:
            raise ValueError(f"view_noise must be nonnegative, got {self.view_noise}")

        if y is None:
            self.classes_ = None
            labels = np.zeros(n, dtype=np.int64)
        else:
            y = np.asarray(y)
            if y.ndim != 1 or y.shape[0] != n:
                raise ValueError(f"y must be one label per row of X, got shape {y.shape}")
            self.classes_, inverse = np.unique(y, return_inverse=True)
            labels = inverse.astype(np.int64)
        n_classes = 1 if self.classes_ is None else int(self.classes_.size)

        rng = numerics.make_rng(self._seed())
        view1 = X + self.view_noise * rng.normal(size=X.shape)
        view2 = X + self.view_noise * rng.normal(size=X.shape)
        dataset = PairDataset(view1, view2, labels)

        # keep the harness's 80/20 split feasible on small inputs
        n_train = n - max(1, int(round(n * 0.2)))
        schedule = ScheduleConfig(
            base_lr=self.base_lr,
            warmup_epochs=min(self.warmup_epochs, self.epochs),
            total_epochs=self.epochs,
            batch_size=max(2, min(self.batch_size, n_train)),
            weight_decay=self.weight_decay,
            sgd_momentum=self.sgd_momentum,
            linear_scaling=self.linear_scaling,
        )
        state, log = trainer.fit_encoder(
            self._framework_spec(),
            schedule,
            dataset,
            n_classes=n_classes,
            seed=self._seed(),
            hidden_dim=self.hidden_dim,
            embedding_dim=self.embedding_dim,
        )
        self.state_ = state
        self.history_ = log
        self.n_features_in_ = X.shape[1]
        return self

    def _checked_input(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but fit saw {self.n_features_in_}")
        return X

    def transform(self, X) -> np.ndarray:
        """Backbone features of X under the trained encoder."""
        X = self._checked_input(X)
        return network.encode(self.state_.online, X).features

    def embed(self, X) -> np.ndarray:
        """Unit-norm projector embeddings, the loss-facing representation."""
        X = self._checked_input(X)
        return network.encode(self.state_.online, X).embeddings

    def predict(self, X) -> np.ndarray:
        """Class predictions from the online linear probe."""
        X = self._checked_input(X)
        if self.classes_ is None:
            raise ValueError("predict requires fit(X, y) with labels")
        features = network.encode(self.state_.online, X).features
        clf = self.state_.classifier
        logits = features @ clf.weight.T + clf.bias
        return self.classes_[np.argmax(logits, axis=1)]

    def score(self, X, y) -> float:
        """Probe top-1 accuracy on (X, y)."""
        return float(np.mean(self.predict(X) == np.asarray(y)))
