import math

import numpy as np
import pytest
from scipy.stats import norm

from roughweak.kernels_cov import HurstParams
from roughweak.path_sampler import PathBatch
from roughweak.payoffs import Payoff, black_scholes_call, romano_touzi_price
from roughweak.schemes import PsiSpec

# zero-rate call with sigma = 0.2, T = 1, S0 = K = 100: 100 (2 N(0.1) - 1)
GOLDEN_BS_ATM = 7.965567455405796


class TestPayoff:
    def test_examples(self):
        assert Payoff.parse("square")(3.0) == 9.0
        assert Payoff.parse("heaviside")(0.0) == 1.0
        assert Payoff.parse("heaviside")(-1e-300) == 0.0
        assert Payoff.parse("shifted_cube:1.5")(-1.5) == 0.0
        assert Payoff.parse("cube")(-2.0) == -8.0
        assert Payoff.parse("poly:0,0,1")(3.0) == 9.0
        assert Payoff.parse("call:1")(np.array([0.5, 2.0])).tolist() == [0.0, 1.0]

    @pytest.mark.parametrize("text", ["square", "cube", "heaviside", "shifted_cube:1.5",
                                      "poly:1.0,-2.0,0.5", "call:100.0"])
    def test_str_roundtrip(self, text):
        p = Payoff.parse(text)
        assert Payoff.parse(str(p)) == p

    def test_aliases(self):
        assert Payoff.parse("x3") == Payoff("cube")
        assert Payoff.parse("step") == Payoff("heaviside")

    @pytest.mark.parametrize("text", ["quartic", "square:1", "shifted_cube", "call:a", "poly:"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            Payoff.parse(text)

    def test_total_on_reals(self):
        x = np.array([-1e10, -1.0, 0.0, 1.0, 1e10])
        for text in ["square", "cube", "heaviside", "shifted_cube:1.5", "poly:1,2,3", "call:0"]:
            assert np.all(np.isfinite(Payoff.parse(text)(x)))


class TestBlackScholes:
    def test_golden(self):
        val = black_scholes_call(100.0, 0.04, 100.0)
        assert val == pytest.approx(GOLDEN_BS_ATM, rel=1e-14)
        assert val == pytest.approx(100.0 * (2.0 * norm.cdf(0.1) - 1.0), rel=1e-12)

    def test_degenerate(self):
        assert black_scholes_call(100.0, 0.0, 100.0) == 0.0
        assert black_scholes_call(120.0, 0.0, 100.0) == 20.0
        assert black_scholes_call(100.0, 400.0, 100.0) == pytest.approx(100.0, rel=1e-9)

    def test_monotone_and_bounded(self):
        v = np.linspace(0.0, 5.0, 101)
        for K in (50.0, 100.0, 150.0):
            p = black_scholes_call(100.0, v, K)
            assert np.all(np.diff(p) >= 0)
            assert np.all(p <= 100.0) and np.all(p >= max(100.0 - K, 0.0))

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            black_scholes_call(100.0, -0.1, 100.0)


@pytest.fixture(scope="module")
def rb_batch():
    from roughweak.experiments import joint_factor
    from roughweak.kernels_cov import TimeGrid
    from roughweak.path_sampler import sample_joint_paths

    grid, hp = TimeGrid(1.0, 32), HurstParams(0.1)
    return sample_joint_paths(joint_factor(grid, hp), grid, hp, 5000, 13)


class TestRomanoTouzi:
    hp = HurstParams(0.1)

    def test_zero_vol_of_vol_uncorrelated(self, rb_batch):
        est, se = romano_touzi_price(rb_batch, PsiSpec("rbergomi", 0.04, 0.0), 0.0, 100.0, 100.0, self.hp)
        assert est == pytest.approx(GOLDEN_BS_ATM, rel=1e-13)
        assert se == 0.0

    @pytest.mark.parametrize("rho", [-0.7, 0.7])
    def test_zero_vol_of_vol_correlated_is_unbiased(self, rb_batch, rho):
        # variance is deterministic but the conditional spot still moves with W_T
        est, se = romano_touzi_price(rb_batch, PsiSpec("rbergomi", 0.04, 0.0), rho, 100.0, 100.0, self.hp)
        assert se > 0
        assert abs(est - GOLDEN_BS_ATM) <= 5 * se

    def test_zero_forward_variance(self, rb_batch):
        for K in (90.0, 100.0, 110.0):
            est, se = romano_touzi_price(rb_batch, PsiSpec("rbergomi", 0.0, 1.9), -0.7, 100.0, K, self.hp)
            assert est == max(100.0 - K, 0.0) and se == 0.0

    def test_uncorrelated_is_mixing_formula(self, rb_batch):
        psi = PsiSpec("rbergomi", 0.04, 1.9)
        est, _ = romano_touzi_price(rb_batch, psi, 0.0, 100.0, 100.0, self.hp)
        v = psi(rb_batch.times[:-1, None], rb_batch.WH[:-1], 0.1) ** 2
        mix = black_scholes_call(100.0, v.sum(axis=0) * rb_batch.grid.dt, 100.0).mean()
        assert est == pytest.approx(mix, rel=1e-13)

    def test_permutation_invariant(self, rb_batch):
        psi = PsiSpec("rbergomi", 0.04, 1.9)
        perm = np.random.default_rng(0).permutation(rb_batch.M)
        shuffled = PathBatch(rb_batch.grid, rb_batch.H, rb_batch.WH[:, perm], rb_batch.W[:, perm], 0)
        a = romano_touzi_price(rb_batch, psi, -0.7, 100.0, 100.0, self.hp)
        b = romano_touzi_price(shuffled, psi, -0.7, 100.0, 100.0, self.hp)
        assert a == pytest.approx(b, rel=1e-12)

    def test_continuous_in_rho(self, rb_batch):
        psi = PsiSpec("rbergomi", 0.04, 1.9)
        p = [romano_touzi_price(rb_batch, psi, r, 100.0, 100.0, self.hp)[0] for r in (-1e-4, 0.0, 1e-4)]
        assert abs(p[0] - p[1]) < 1e-3 and abs(p[2] - p[1]) < 1e-3
        assert p[1] == pytest.approx(0.5 * (p[0] + p[2]), abs=1e-6)

    def test_price_near_martingale_bounds(self, rb_batch):
        est, se = romano_touzi_price(rb_batch, PsiSpec("rbergomi", 0.04, 1.9), -0.7, 100.0, 100.0, self.hp)
        assert 0.0 < est < 100.0 and se > 0

    def test_validation(self, rb_batch):
        with pytest.raises(ValueError):
            romano_touzi_price(rb_batch, PsiSpec("linear"), 0.0, 100.0, 100.0, self.hp)
        with pytest.raises(ValueError):
            romano_touzi_price(rb_batch, PsiSpec("rbergomi", 0.04, 1.9), 1.5, 100.0, 100.0, self.hp)
