import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from noisynp import (
    NoisyLabelDRM,
    NoisyNPClassifier,
    NoisyNPMCClassifier,
    NoisyUmbrellaClassifier,
)
from noisynp.datagen import load_scenario, sample_test, sample_training, stream


@pytest.fixture(scope="module")
def binary_xy():
    sc = load_scenario("binary-A")
    train, _ = sample_training(sc, stream(sc.seed, 0, "train"), 1000)
    test = sample_test(sc, stream(sc.seed, 0, "test"), 4000)
    names = np.array(["neg", "pos"])
    return train.features, names[train.noisy_labels], test.features, names[test.true_labels]


@pytest.mark.parametrize("cls", [NoisyLabelDRM, NoisyNPClassifier, NoisyNPMCClassifier,
                                 NoisyUmbrellaClassifier])
def test_params_and_clone(cls):
    est = cls(random_state=3)
    params = est.get_params()
    assert params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(basis="quad")
    assert est.get_params()["basis"] == "quad"
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((2, 3)))


def test_drm_string_labels(binary_xy):
    X, y, Xt, yt = binary_xy
    est = NoisyLabelDRM(n_restarts=2).fit(X, y)
    assert list(est.classes_) == ["neg", "pos"]
    P = est.predict_proba(Xt)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert set(est.predict(Xt)) <= {"neg", "pos"}
    assert est.score(Xt, yt) > 0.7
    assert np.abs(est.confusion_matrix_[0, 0] - 0.95) < 0.05
    assert est.trace_.converged


def test_np_classifier_controls_class0(binary_xy):
    X, y, Xt, yt = binary_xy
    est = NoisyNPClassifier(alpha=0.05, n_restarts=2).fit(X, y)
    pred = est.predict(Xt)
    type1 = np.mean(pred[yt == "neg"] != "neg")
    assert type1 < 0.09
    assert 0 < est.threshold_ < 1
    with pytest.raises(ValueError, match="expected 3 features"):
        est.predict(Xt[:, :2])


def test_np_classifier_rejects_multiclass():
    X = np.random.default_rng(0).normal(size=(30, 2))
    with pytest.raises(ValueError, match="binary"):
        NoisyNPClassifier().fit(X, np.arange(30) % 3)


def test_npmc_classifier():
    sc = load_scenario("multiclass-b")
    train, _ = sample_training(sc, stream(sc.seed, 0, "train"), 900)
    est = NoisyNPMCClassifier(alpha={0: 0.1}, n_restarts=1, n_starts=2).fit(
        train.features, train.noisy_labels)
    assert est.lambda_hat_.shape == (1,)
    assert est.feasibility_ in ("feasible", "suspect_infeasible")
    assert est.predict(train.features[:5]).shape == (5,)


def test_npmc_bad_spec_fails_before_fit():
    X = np.random.default_rng(0).normal(size=(30, 2))
    est = NoisyNPMCClassifier(rho=[1, 1], n_restarts=1)
    with pytest.raises(ValueError, match="rho"):
        est.fit(X, np.arange(30) % 3)
    assert not hasattr(est, "params_")


def test_umbrella_estimator(binary_xy):
    X, y, Xt, yt = binary_xy
    est = NoisyUmbrellaClassifier(alpha=0.1, corruption=(0.95, 0.05), n_restarts=1).fit(X, y)
    pred = est.predict(Xt)
    assert np.mean(pred[yt == "neg"] != "neg") < 0.15
    assert est.decision_function(Xt).shape == (len(Xt),)


def test_refit_is_deterministic(binary_xy):
    X, y, _, _ = binary_xy
    a = NoisyLabelDRM(n_restarts=2, random_state=9).fit(X, y)
    b = clone(a).fit(X, y)
    np.testing.assert_array_equal(a.params_.beta, b.params_.beta)
