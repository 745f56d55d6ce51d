import numpy as np
import pytest

from noisynp.em import EmConfig
from noisynp.model import make_dataset
from noisynp.umbrella import (
    UmbrellaConfig,
    binomial_alpha,
    d_hat,
    fit_umbrella,
    select_k_star,
    type1_upper_bounds,
)

from oracles import pmf_tail


class TestBinomialAlpha:
    @pytest.mark.parametrize("delta", [0.01, 0.05, 0.3, 0.9])
    def test_closed_forms(self, delta):
        assert binomial_alpha(1, 1, delta) == delta
        assert binomial_alpha(2, 2, delta) == pytest.approx(np.sqrt(delta), abs=1e-15)

    def test_pmf_sum_oracle(self):
        a = binomial_alpha(5, 20, 0.05)
        assert pmf_tail(5, 20, a) == pytest.approx(0.05, abs=1e-9)

    def test_random_triples(self, rng):
        for _ in range(50):
            m = int(rng.integers(1, 200))
            k = int(rng.integers(1, m + 1))
            delta = float(rng.uniform(0.001, 0.999))
            assert abs(pmf_tail(k, m, binomial_alpha(k, m, delta)) - delta) <= 1e-9

    def test_errors(self):
        with pytest.raises(ValueError):
            binomial_alpha(1, 3, 0.0)
        with pytest.raises(ValueError):
            binomial_alpha(4, 3, 0.5)
        with pytest.raises(ValueError):
            binomial_alpha(0, 3, 0.5)

    def test_upper_bounds_decrease_with_k(self):
        a = type1_upper_bounds(50, 0.05)
        assert np.all(np.diff(a) < 0)
        # thresholding at the smallest score leaves almost all class-0 mass above it
        assert a[0] > 0.9


class TestDHat:
    def test_no_class0_noise(self, rng):
        assert d_hat(0.3, rng.normal(size=10), rng.normal(size=7), 1.0, 0.2) == 0.0

    def test_identical_samples(self, rng):
        s = rng.normal(size=20)
        np.testing.assert_array_equal(d_hat(np.linspace(-3, 3, 13), s, s.copy(), 0.9, 0.1), 0.0)

    def test_hand_values(self):
        assert d_hat(2.0, [1, 3], [2, 4], 0.9, 0.1) == pytest.approx(0.0)
        assert d_hat(1.0, [1, 3], [2, 4], 0.9, 0.1) == pytest.approx(0.0625)

    def test_requires_ordering(self):
        with pytest.raises(ValueError):
            d_hat(0.0, [1.0], [2.0], 0.2, 0.3)


class TestSelect:
    def test_threshold_is_calibration_score(self, rng):
        cal = rng.normal(size=100)
        k, thr, sat = select_k_star(cal, rng.normal(size=50), rng.normal(1, 1, 50),
                                    0.1, 0.05, 0.95, 0.05)
        assert thr in cal and np.sort(cal)[k - 1] == thr and not sat

    def test_k_star_nonincreasing_in_alpha(self, rng):
        cal, e0, e1 = rng.normal(size=200), rng.normal(size=80), rng.normal(1, 1, 80)
        ks = [select_k_star(cal, e0, e1, a, 0.05, 0.9, 0.1)[0] for a in (0.02, 0.05, 0.1, 0.2)]
        assert all(b <= a for a, b in zip(ks, ks[1:]))

    def test_clean_rule_without_noise(self, rng):
        # known (1, 0): the k* rule of the clean umbrella algorithm
        cal = rng.normal(size=100)
        k, _, _ = select_k_star(cal, cal, cal, 0.1, 0.05, 1.0, 0.0)
        a_k = type1_upper_bounds(100, 0.05)
        assert k == int(np.flatnonzero(a_k <= 0.1)[0]) + 1

    def test_median_bound_gives_empirical_quantile(self, rng):
        # at delta = 1/2 the bound is the median of the order statistic's
        # type-I error, so the threshold sits at the empirical 1 - alpha quantile
        cal = rng.normal(size=2000)
        _, thr, _ = select_k_star(cal, cal, cal, 0.1, 0.5, 1.0, 0.0)
        assert np.mean(cal > thr) == pytest.approx(0.1, abs=0.002)
        # smaller delta is more conservative
        _, thr_strict, _ = select_k_star(cal, cal, cal, 0.1, 0.05, 1.0, 0.0)
        assert thr_strict > thr

    def test_saturation(self, rng):
        cal = rng.normal(size=5)
        k, thr, sat = select_k_star(cal, cal, cal, 0.01, 0.05, 1.0, 0.0)
        assert sat and k == 5 and thr == cal.max()


class TestFit:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            UmbrellaConfig(corruption=(0.2, 0.5))
        with pytest.raises(ValueError):
            UmbrellaConfig(splits0=(0.5, 0.5))
        with pytest.raises(ValueError):
            UmbrellaConfig(delta=1.0)

    def test_known_and_estimated(self, case_a_binary):
        _, data, _ = case_a_binary
        known = fit_umbrella(data, UmbrellaConfig(corruption=(0.95, 0.05)))
        assert known.m0_used == 0.95 and known.m1_used == 0.05
        assert known.m == round(0.3 * np.sum(data.noisy_labels == 0))
        est = fit_umbrella(data, UmbrellaConfig(), EmConfig(n_restarts=2))
        assert abs(est.m0_used - 0.95) < 0.05 and abs(est.m1_used - 0.05) < 0.05
        doc = est.to_dict()
        assert {"k_star", "threshold", "m0_used", "m1_used"} <= set(doc)

    def test_custom_score_fn(self, case_a_binary):
        _, data, _ = case_a_binary
        clf = fit_umbrella(data, UmbrellaConfig(corruption=(1.0, 0.0)),
                           score_fn=lambda G, y: (lambda H: H.sum(axis=1)))
        assert clf.coeffs is None
        np.testing.assert_allclose(clf.scores(data.basis_view[:3]), data.basis_view[:3].sum(1))

    def test_binary_only(self, rng):
        data = make_dataset(rng.normal(size=(30, 1)), rng.integers(0, 3, 30), K=3)
        with pytest.raises(ValueError):
            fit_umbrella(data)

    def test_tiny_split_rejected(self):
        data = make_dataset(np.arange(4.0)[:, None], [0, 0, 1, 1])
        with pytest.raises(ValueError):
            fit_umbrella(data, UmbrellaConfig(corruption=(1.0, 0.0)))
