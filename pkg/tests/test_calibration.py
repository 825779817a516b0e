import math

import numpy as np
import pytest

from osrcal.calibration import TemperatureFit, apply_temperature, fit_temperature, nll
from osrcal.errors import FitError, InvalidArgumentError
from osrcal.tensor import softmax

from oracles import nll_loops


def sample_self_consistent(n, k, seed, spread=2.0):
    """Random logits with labels drawn from softmax(z): the NLL optimum is T = 1."""
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=spread, size=(n, k))
    p = softmax(z)
    u = rng.random(n)[:, None]
    y = (u > np.cumsum(p, axis=1)).sum(axis=1)
    return z, np.minimum(y, k - 1)


class TestNLL:
    def test_uniform(self):
        assert nll([[0.0, 0.0]], [0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_confident(self):
        assert nll([[10.0, 0.0]], [0]) == pytest.approx(math.log1p(math.exp(-10.0)), rel=1e-12)

    def test_scale_identity(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(30, 4))
        y = rng.integers(0, 4, 30)
        assert nll(z, y, 1.7) == pytest.approx(nll(2 * z, y, 3.4), rel=1e-13)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        z = rng.normal(scale=5, size=(25, 5))
        y = rng.integers(0, 5, 25)
        for t in (0.3, 1.0, 4.0):
            assert nll(z, y, t) == pytest.approx(nll_loops(z, y, t), rel=1e-12)

    def test_rejects_unknown_label(self):
        with pytest.raises(InvalidArgumentError):
            nll([[1.0, 0.0]], [2])

    def test_convex_in_inverse_temperature(self):
        rng = np.random.default_rng(7)
        betas = np.linspace(1 / 20.0, 1 / 0.05, 50)
        for _ in range(20):
            z = rng.normal(scale=rng.uniform(0.5, 5), size=(40, 5))
            y = rng.integers(0, 5, 40)
            f = np.array([nll(z, y, 1 / b) for b in betas])
            assert np.all(f[:-2] - 2 * f[1:-1] + f[2:] >= -1e-9)


class TestFitTemperature:
    def test_recovers_unit_temperature(self):
        z, y = sample_self_consistent(20000, 5, seed=11)
        fit = fit_temperature(z, y)
        assert 0.93 <= fit.temperature <= 1.07
        assert not fit.boundary_hit

    def test_recovers_scaled_temperature(self):
        z, y = sample_self_consistent(20000, 5, seed=11)
        assert 2.8 <= fit_temperature(3 * z, y).temperature <= 3.2

    def test_huge_margin_hits_lower_bound(self):
        z = np.zeros((12, 3))
        y = np.arange(12) % 3
        z[np.arange(12), y] = 1e6
        fit = fit_temperature(z, y)
        assert fit.temperature == 0.05
        assert fit.boundary_hit

    def test_never_worse_than_identity(self):
        rng = np.random.default_rng(2)
        for seed in range(10):
            z, y = sample_self_consistent(200, 4, seed=seed, spread=rng.uniform(0.5, 4))
            fit = fit_temperature(z, y)
            assert fit.nll_after <= fit.nll_before + 1e-12
            assert fit.nll_after == pytest.approx(nll(z, y, fit.temperature), rel=1e-12)
            assert fit.bounds[0] <= fit.temperature <= fit.bounds[1]

    def test_deterministic(self):
        z, y = sample_self_consistent(500, 4, seed=5)
        assert fit_temperature(z, y).temperature == fit_temperature(z.copy(), y.copy()).temperature

    @pytest.mark.parametrize("c", [0.5, 2.0, 5.0])
    def test_scale_equivariance(self, c):
        z, y = sample_self_consistent(3000, 4, seed=9)
        base = fit_temperature(z, y)
        scaled = fit_temperature(c * z, y)
        assert not (base.boundary_hit or scaled.boundary_hit)
        assert abs(scaled.temperature - c * base.temperature) <= 2 * 1e-4 * c

    def test_too_small(self):
        with pytest.raises(FitError):
            fit_temperature(np.ones((5, 3)) * [1, 2, 3], [0, 1, 2, 0, 1])

    def test_constant_rows(self):
        with pytest.raises(FitError, match="degenerate"):
            fit_temperature(np.ones((20, 3)), np.zeros(20, dtype=int))

    def test_roundtrip_dict(self):
        z, y = sample_self_consistent(100, 3, seed=1)
        fit = fit_temperature(z, y)
        assert TemperatureFit.from_dict(fit.to_dict()) == fit


class TestApplyTemperature:
    def test_identity(self):
        z = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(apply_temperature(z, 1.0), softmax(z))

    def test_halving(self):
        e = math.e
        np.testing.assert_allclose(apply_temperature([[2.0, 0.0]], 2.0), [[e / (e + 1), 1 / (e + 1)]], atol=1e-15)

    def test_argmax_unchanged(self):
        rng = np.random.default_rng(4)
        z = rng.normal(scale=3, size=(1000, 6))
        for t in (0.2, 1.0, 7.0):
            np.testing.assert_array_equal(np.argmax(apply_temperature(z, t), axis=1), np.argmax(z, axis=1))
