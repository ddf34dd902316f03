import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dualtemp import numerics
from dualtemp.estimator import ContrastiveEncoder


def two_blob_data(n=60, dim=8, seed=20):
    rng = numerics.make_rng(seed)
    labels = (np.arange(n) % 2).astype(np.int64)
    centers = np.zeros((2, dim))
    centers[0, 0], centers[1, 0] = 1.0, -1.0
    X = centers[labels] + 0.08 * rng.normal(size=(n, dim))
    return X, labels


def quick_estimator(**kw):
    defaults = dict(epochs=3, batch_size=16, warmup_epochs=1, hidden_dim=16, embedding_dim=8, random_state=0)
    defaults.update(kw)
    return ContrastiveEncoder(**defaults)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = ContrastiveEncoder(framework="simmoco", tau_alpha=0.2, epochs=5)
        params = est.get_params()
        assert params["framework"] == "simmoco"
        assert params["tau_alpha"] == 0.2
        rebuilt = ContrastiveEncoder(**params)
        assert rebuilt.get_params() == params

    def test_set_params_chains(self):
        est = ContrastiveEncoder().set_params(tau_beta=0.5, symmetric=True)
        assert est.tau_beta == 0.5 and est.symmetric is True

    def test_clone_preserves_unfitted_config(self):
        est = quick_estimator(framework="noncl-simsiam", ha_toggle=True)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_transform_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            quick_estimator().transform(np.zeros((2, 4)))

    def test_unknown_framework_rejected_at_fit(self):
        X, y = two_blob_data()
        with pytest.raises(ValueError, match="framework"):
            quick_estimator(framework="dino").fit(X, y)

    def test_invalid_constructor_args_surface_at_fit(self):
        # sklearn protocol: __init__ stores verbatim, fit validates
        est = ContrastiveEncoder(epochs=-1)
        assert est.epochs == -1
        X, y = two_blob_data()
        with pytest.raises(ValueError):
            est.fit(X, y)


class TestFitTransform:
    def test_feature_and_embedding_shapes(self):
        X, y = two_blob_data()
        est = quick_estimator().fit(X, y)
        feats = est.transform(X)
        assert feats.shape == (60, 16)
        emb = est.embed(X)
        assert emb.shape == (60, 8)
        assert_allclose(np.linalg.norm(emb, axis=1), 1.0, rtol=1e-9)

    def test_fit_transform_equals_fit_then_transform(self):
        X, y = two_blob_data()
        a = quick_estimator().fit_transform(X, y)
        b = quick_estimator().fit(X, y).transform(X)
        assert np.array_equal(a, b)

    def test_unlabeled_fit_supports_transform_not_predict(self):
        X, _ = two_blob_data()
        est = quick_estimator().fit(X)
        assert est.classes_ is None
        assert est.transform(X).shape == (60, 16)
        with pytest.raises(ValueError, match="labels"):
            est.predict(X)

    def test_feature_count_mismatch_rejected(self):
        X, y = two_blob_data()
        est = quick_estimator().fit(X, y)
        with pytest.raises(ValueError, match="features"):
            est.transform(np.zeros((3, 5)))

    def test_history_records_epochs(self):
        X, y = two_blob_data()
        est = quick_estimator(epochs=3).fit(X, y)
        assert len(est.history_.rows) == 3
        assert est.history_.rows[-1]["framework"] == "simco"

    def test_small_input_clamps_batch(self):
        X, y = two_blob_data(n=12)
        est = quick_estimator(batch_size=128).fit(X, y)
        assert est.transform(X).shape[0] == 12

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="samples"):
            quick_estimator().fit(np.zeros((2, 4)))

    def test_label_length_mismatch_rejected(self):
        X, _ = two_blob_data()
        with pytest.raises(ValueError, match="label per row"):
            quick_estimator().fit(X, np.zeros(10, dtype=np.int64))


class TestPredictScore:
    def test_separable_blobs_scored_above_chance(self):
        X, y = two_blob_data(n=120)
        est = quick_estimator(epochs=8, base_lr=0.05).fit(X, y)
        assert est.score(X, y) >= 0.8

    def test_predict_returns_original_label_values(self):
        X, y01 = two_blob_data()
        y = np.where(y01 == 0, "left", "right")
        est = quick_estimator().fit(X, y)
        assert set(est.predict(X)) <= {"left", "right"}
        assert list(est.classes_) == ["left", "right"]

    def test_st_simco_usable_without_touching_tau_beta(self):
        X, y = two_blob_data()
        est = quick_estimator(framework="st-simco", tau_alpha=0.2).fit(X, y)
        assert est.state_.framework.dt.tau_beta == 0.2


class TestDeterminism:
    def test_same_random_state_bitwise_equal(self):
        X, y = two_blob_data()
        a = quick_estimator(random_state=5).fit(X, y).transform(X)
        b = quick_estimator(random_state=5).fit(X, y).transform(X)
        assert np.array_equal(a, b)

    def test_different_random_state_differs(self):
        X, y = two_blob_data()
        a = quick_estimator(random_state=5).fit(X, y).transform(X)
        b = quick_estimator(random_state=6).fit(X, y).transform(X)
        assert not np.array_equal(a, b)
