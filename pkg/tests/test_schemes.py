import math

import numpy as np
import pytest

from conftest import within_se
from roughweak.kernels_cov import HurstParams, TimeGrid
from roughweak.path_sampler import PathBatch, subsample
from roughweak.schemes import (
    PsiSpec,
    discrete_second_moment,
    euler_left_point,
    exact_second_moment,
    reference_solution,
    second_moment_density,
)

LIN = PsiSpec("linear")
RB = PsiSpec("rbergomi", 0.04, 1.9)


def _hand_batch():
    grid = TimeGrid(1.0, 2)
    WH = np.array([[0.0], [0.8], [0.3]])
    W = np.array([[0.0], [1.0], [0.0]])
    return PathBatch(grid, 0.1, WH, W, 0)


class TestPsiSpec:
    @pytest.mark.parametrize("text", ["linear", "rbergomi:0.04,1.9", "rbergomi:0.09,-0.5"])
    def test_roundtrip(self, text):
        assert str(PsiSpec.parse(text)) == text

    @pytest.mark.parametrize("text", ["quadratic", "rbergomi:0.04", "rbergomi:-1,2", "linear:3"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            PsiSpec.parse(text)

    def test_values(self):
        assert LIN(0.5, 1.7, 0.1) == 1.7
        assert RB(0.0, 0.0, 0.1) == pytest.approx(0.2, rel=1e-15)
        assert np.all(RB(np.linspace(0, 1, 5), np.linspace(-3, 3, 5), 0.1) > 0)


class TestEuler:
    def test_hand_path(self):
        res = euler_left_point(_hand_batch(), LIN, HurstParams(0.1))
        assert res.values[0] == pytest.approx(-0.8, abs=1e-15)
        assert res.n == 2 and res.dt == 0.5

    def test_one_step_linear_is_zero(self, batch_factory):
        b = subsample(batch_factory(0.1, 1.0, 64, 1000, 1), 64)
        assert np.all(euler_left_point(b, LIN, HurstParams(0.1)).values == 0)

    def test_one_step_rbergomi(self, batch_factory):
        b = subsample(batch_factory(0.1, 1.0, 64, 1000, 1), 64)
        vals = euler_left_point(b, RB, HurstParams(0.1)).values
        assert np.allclose(vals, 0.2 * b.W[-1], rtol=1e-14, atol=0)

    def test_matches_plain_sum(self, batch_factory):
        b = batch_factory(0.1, 1.0, 64, 1000, 1)
        hp = HurstParams(0.1)
        plain = np.sum(b.WH[:-1] * np.diff(b.W, axis=0), axis=0)
        assert np.allclose(euler_left_point(b, LIN, hp).values, plain, rtol=1e-12, atol=1e-14)

    def test_scaling(self, batch_factory):
        b = batch_factory(0.1, 1.0, 64, 1000, 1)
        hp = HurstParams(0.1)
        # power-of-two scaling commutes with every rounding step
        scaled = PathBatch(b.grid, b.H, 4.0 * b.WH, b.W, b.seed)
        assert np.array_equal(euler_left_point(scaled, LIN, hp).values,
                              4.0 * euler_left_point(b, LIN, hp).values)
        third = PathBatch(b.grid, b.H, 3.0 * b.WH, b.W, b.seed)
        assert np.allclose(euler_left_point(third, LIN, hp).values,
                           3.0 * euler_left_point(b, LIN, hp).values, rtol=1e-13, atol=1e-15)

    def test_reference_is_stride_one(self, batch_factory):
        b = batch_factory(0.1, 1.0, 64, 1000, 1)
        hp = HurstParams(0.1)
        ref = reference_solution(b, LIN, hp).values
        assert np.array_equal(ref, euler_left_point(subsample(b, 1), LIN, hp).values)
        assert np.all(ref - ref == 0)

    @pytest.mark.parametrize("psi", [LIN, RB], ids=str)
    def test_martingale(self, batch_factory, psi):
        b = batch_factory(0.1, 1.0, 64, 100_000, 2)
        x = euler_left_point(b, psi, HurstParams(0.1)).values
        assert within_se(x.mean(), 0.0, x.std(ddof=1) / math.sqrt(b.M))

    @pytest.mark.parametrize("H", [0.05, 0.1, 0.5])
    def test_ito_isometry(self, batch_factory, H):
        hp = HurstParams(H)
        b = batch_factory(H, 1.0, 64, 100_000, 3)
        for n in (4, 16, 64):
            x2 = euler_left_point(subsample(b, 64 // n), LIN, hp).values ** 2
            target = discrete_second_moment(LIN, hp, 1.0, n)
            assert within_se(x2.mean(), target, x2.std(ddof=1) / math.sqrt(b.M)), (H, n)


class TestMomentOracles:
    def test_exact_examples(self):
        assert exact_second_moment(LIN, HurstParams(0.5), 1.0) == pytest.approx(0.5, rel=1e-15)
        assert exact_second_moment(LIN, HurstParams(0.1), 1.0) == pytest.approx(1 / 1.2, rel=1e-15)
        assert exact_second_moment(RB, HurstParams(0.1), 1.0) == pytest.approx(0.04, rel=1e-15)

    def test_discrete_examples(self):
        assert discrete_second_moment(LIN, HurstParams(0.5), 1.0, 2) == pytest.approx(0.25, rel=1e-15)
        assert discrete_second_moment(LIN, HurstParams(0.2), 1.0, 1) == 0.0
        for n in (1, 7, 64):
            assert discrete_second_moment(RB, HurstParams(0.1), 1.0, n) == pytest.approx(0.04, rel=1e-13)

    def test_gauss_hermite_crosscheck(self):
        s = np.linspace(0.05, 1.0, 7)
        for psi in (LIN, RB, PsiSpec("rbergomi", 0.09, 0.7)):
            for H in (0.1, 0.3):
                hp = HurstParams(H)
                a = second_moment_density(psi, hp, s)
                g = second_moment_density(psi, hp, s, method="gauss_hermite")
                assert np.allclose(a, g, rtol=1e-10, atol=0)

    def test_discrete_converges_to_exact(self):
        hp = HurstParams(0.3)
        vals = [discrete_second_moment(LIN, hp, 2.0, 2**k) for k in range(2, 14)]
        assert abs(vals[-1] - exact_second_moment(LIN, hp, 2.0)) < 1e-3
        assert np.all(np.diff(vals) > 0)

    @pytest.mark.parametrize("H", [0.05, 0.15, 0.5])
    def test_analytic_rate_one(self, H):
        hp = HurstParams(H)
        n = 2 ** np.arange(1, 11)
        err = [abs(exact_second_moment(LIN, hp, 1.0) - discrete_second_moment(LIN, hp, 1.0, k)) for k in n]
        slope = np.polyfit(np.log2(1.0 / n), np.log2(err), 1)[0]
        assert abs(slope - 1.0) <= 0.05

    def test_invalid(self):
        with pytest.raises(ValueError):
            discrete_second_moment(LIN, HurstParams(0.1), 1.0, 0)
        with pytest.raises(ValueError):
            exact_second_moment(LIN, HurstParams(0.1), -1.0)
