import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dskernel.data import make_rng
from dskernel.dsk import (
    AdjustmentParams,
    EigStack,
    Mode,
    adjust,
    adjusted_s_divergence,
    dsk_gradient,
    dsk_gram,
    dsk_kernel,
)
from dskernel.errors import DimensionMismatch, NonPositiveCoefficient
from dskernel.spd import s_divergence, stein_kernel

from conftest import diag, rand_spd


def fd_gradient(x, y, theta, p, h=1e-5):
    g = np.empty(p.dim)
    for z in range(p.dim):
        e = np.zeros(p.dim)
        e[z] = h
        g[z] = (dsk_kernel(x, y, theta, p.with_alpha(p.alpha + e)) - dsk_kernel(x, y, theta, p.with_alpha(p.alpha - e))) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


class TestParams:
    def test_coefficient_positive(self):
        with pytest.raises(NonPositiveCoefficient):
            AdjustmentParams(Mode.COEFFICIENT, [1.0, 0.0])

    def test_power_unconstrained(self):
        AdjustmentParams(Mode.POWER, [-2.0, 0.0])

    def test_alpha0_length(self):
        with pytest.raises(DimensionMismatch):
            AdjustmentParams(Mode.POWER, [1.0, 1.0], [1.0])

    def test_mode_parse(self):
        assert Mode.parse("coef") is Mode.COEFFICIENT
        assert Mode.parse("p") is Mode.POWER
        with pytest.raises(ValueError):
            Mode.parse("cubic")

    def test_dimension_check(self, rng):
        with pytest.raises(DimensionMismatch):
            adjust(rand_spd(rng, 3), AdjustmentParams.identity(2))


class TestAdjust:
    @pytest.mark.parametrize("mode", list(Mode))
    def test_identity(self, mode, rng):
        x = rand_spd(rng, 4)
        assert np.allclose(adjust(x, AdjustmentParams.identity(4, mode)).entries, x.entries, atol=1e-10, rtol=0)

    def test_sqrt_diag(self):
        out = adjust(diag(4, 9), AdjustmentParams(Mode.POWER, [0.5, 0.5]))
        assert np.allclose(out.entries, np.diag([2.0, 3.0]), atol=1e-12)

    def test_zero_power(self, rng):
        out = adjust(rand_spd(rng, 3), AdjustmentParams(Mode.POWER, np.zeros(3)))
        assert np.allclose(out.entries, np.eye(3), atol=1e-12)

    def test_alpha_acts_on_sorted_eigenvalues(self):
        # alpha_1 belongs to the largest eigenvalue wherever it sits on the diagonal
        out = adjust(diag(1, 5), AdjustmentParams(Mode.COEFFICIENT, [2.0, 3.0]))
        assert np.allclose(out.entries, np.diag([3.0, 10.0]))

    @pytest.mark.parametrize("mode", list(Mode))
    def test_commutes(self, mode, rng):
        x = rand_spd(rng, 5)
        out = adjust(x, AdjustmentParams(mode, 0.5 + rng.uniform(size=5)))
        assert np.linalg.norm(out.entries @ x.entries - x.entries @ out.entries) <= 1e-8


class TestKernel:
    def test_self(self, rng):
        x = rand_spd(rng, 3)
        p = AdjustmentParams(Mode.POWER, [0.3, 1.2, 2.0])
        assert adjusted_s_divergence(x, x, p) == pytest.approx(0.0, abs=1e-12)
        assert dsk_kernel(x, x, 1.0, p) == pytest.approx(1.0, abs=1e-12)

    def test_identity_reduces_to_sk(self, rng):
        x, y = rand_spd(rng, 4), rand_spd(rng, 4)
        p = AdjustmentParams.identity(4)
        assert adjusted_s_divergence(x, y, p) == s_divergence(x, y)
        assert dsk_kernel(x, y, 1.5, p) == stein_kernel(x, y, 1.5)

    def test_diagonal_oracle(self):
        p = AdjustmentParams(Mode.POWER, [0.5, 0.5])
        assert adjusted_s_divergence(diag(1, 1), diag(4, 4), p) == pytest.approx(np.log(2.25 / 2), rel=1e-12)
        assert dsk_kernel(diag(1, 1), diag(4, 4), 1.0, p) == pytest.approx(8 / 9, rel=1e-12)

    def test_symmetric(self, rng):
        x, y = rand_spd(rng, 4), rand_spd(rng, 4)
        p = AdjustmentParams(Mode.COEFFICIENT, [0.5, 1.0, 2.0, 3.0])
        assert dsk_kernel(x, y, 1.0, p) == pytest.approx(dsk_kernel(y, x, 1.0, p), rel=1e-13)


class TestGradient:
    def test_identical_arguments(self, rng):
        x = rand_spd(rng, 4)
        assert np.allclose(dsk_gradient(x, x, 1.0, AdjustmentParams.identity(4)), 0.0, atol=1e-12)

    @pytest.mark.parametrize("mode", list(Mode))
    def test_finite_differences(self, mode, rng):
        for _ in range(50):
            d = int(rng.integers(2, 7))
            x, y = rand_spd(rng, d), rand_spd(rng, d)
            p = AdjustmentParams(mode, rng.uniform(0.5, 1.5, d))
            theta = float(rng.choice([0.5, 1.0, 2.0]))
            assert rel_err(dsk_gradient(x, y, theta, p), fd_gradient(x, y, theta, p)) <= 1e-4

    def test_power_diagonal_closed_form(self):
        x, y = diag(4, 1), diag(9, 2)
        a, b = np.array([4.0, 1.0]), np.array([9.0, 2.0])
        alpha = np.array([0.7, 1.3])
        theta = 1.0
        p = AdjustmentParams(Mode.POWER, alpha)
        k = dsk_kernel(x, y, theta, p)
        ds = (a**alpha * np.log(a) + b**alpha * np.log(b)) / (a**alpha + b**alpha) - 0.5 * (np.log(a) + np.log(b))
        assert np.allclose(dsk_gradient(x, y, theta, p), -theta * k * ds, rtol=1e-12)

    def test_coefficient_diagonal_closed_form(self):
        # commuting pair: the alpha_z cancel inside every log term, so dS/dalpha = 0
        x, y = diag(4, 1), diag(9, 2)
        g = dsk_gradient(x, y, 1.0, AdjustmentParams.identity(2, Mode.COEFFICIENT))
        assert np.allclose(g, 0.0, atol=1e-14)


class TestGram:
    @pytest.mark.parametrize("mode", list(Mode))
    def test_matches_scalar(self, mode, rng):
        a = [rand_spd(rng, 3) for _ in range(5)]
        b = [rand_spd(rng, 3) for _ in range(3)]
        p = AdjustmentParams(mode, [0.8, 1.1, 1.4])
        k, dk = dsk_gram(a, 1.0, p, with_grad=True)
        assert np.allclose(k, [[dsk_kernel(x, y, 1.0, p) for y in a] for x in a], rtol=1e-12)
        assert np.allclose(np.moveaxis(dk, 0, -1), [[dsk_gradient(x, y, 1.0, p) for y in a] for x in a], atol=1e-12)
        assert np.array_equal(np.diag(k), np.ones(5))
        kc, dkc = dsk_gram(EigStack.of(a), 1.0, p, other=b, with_grad=True)
        assert np.allclose(kc, [[dsk_kernel(x, y, 1.0, p) for y in b] for x in a], rtol=1e-12)
        assert np.allclose(np.moveaxis(dkc, 0, -1), [[dsk_gradient(x, y, 1.0, p) for y in b] for x in a], atol=1e-12)

    @pytest.mark.parametrize("mode", list(Mode))
    def test_psd(self, mode, rng):
        d = 5
        a = [rand_spd(rng, d) for _ in range(30)]
        p = AdjustmentParams(mode, rng.uniform(0.5, 2.0, d))
        for theta in (0.5, 1.0, 1.5, 2.0, 4.0):
            k = dsk_gram(a, theta, p)
            assert np.linalg.eigvalsh(k).min() >= -1e-8 * np.trace(k)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 6))
def test_identity_adjustment_is_stein(seed, d):
    rng = make_rng(seed)
    x, y = rand_spd(rng, d), rand_spd(rng, d)
    for mode in Mode:
        assert abs(dsk_kernel(x, y, 1.0, AdjustmentParams.identity(d, mode)) - stein_kernel(x, y, 1.0)) <= 1e-12
