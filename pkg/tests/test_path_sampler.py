import numpy as np
import pytest

from conftest import within_se
from roughweak.experiments import joint_factor
from roughweak.kernels_cov import HurstParams, TimeGrid, cov_fbm_bm
from roughweak.path_sampler import (
    PathBatch,
    dump_batch,
    empirical_moments,
    iter_path_blocks,
    load_batch,
    sample_joint_paths,
    subsample,
)


def _sample(H, T, n, M, seed=0, **kw):
    grid, hp = TimeGrid(T, n), HurstParams(H)
    return sample_joint_paths(joint_factor(grid, hp), grid, hp, M, seed, **kw)


def test_empty_batch():
    b = _sample(0.1, 1.0, 8, 0)
    assert b.M == 0
    assert b.WH.shape == (9, 0)
    assert b.grid.n == 8


def test_zero_rows_and_shapes():
    b = _sample(0.2, 2.0, 16, 100)
    assert b.WH.shape == b.W.shape == (17, 100)
    assert np.all(b.WH[0] == 0) and np.all(b.W[0] == 0)


def test_brownian_degeneracy():
    b = _sample(0.5, 1.0, 64, 1000, seed=5)
    assert np.max(np.abs(b.WH - b.W)) <= 1e-8 * np.max(np.abs(b.W))


def test_terminal_variance(batch_factory):
    b = batch_factory(0.1, 1.0, 256, 100_000, 11)
    mom = empirical_moments(b)["WH"]
    assert within_se(mom.var[-1], 1.0, mom.var_se[-1])


def test_determinism_across_workers_and_calls():
    a = _sample(0.1, 1.0, 32, 3000, seed=9, stream_layout=256)
    b = _sample(0.1, 1.0, 32, 3000, seed=9, stream_layout=256, workers=4)
    c = _sample(0.1, 1.0, 32, 3000, seed=9, stream_layout=256)
    assert np.array_equal(a.WH, b.WH) and np.array_equal(a.W, b.W)
    assert np.array_equal(a.WH, c.WH)
    d = _sample(0.1, 1.0, 32, 3000, seed=10, stream_layout=256)
    assert not np.array_equal(a.W, d.W)


def test_prefix_stability():
    # path m depends only on (seed, block of m), so a longer run extends a shorter one
    a = _sample(0.1, 1.0, 16, 1500, seed=4)
    b = _sample(0.1, 1.0, 16, 2500, seed=4)
    assert np.array_equal(a.WH[:, :1024], b.WH[:, :1024])


def test_block_iteration_matches_full():
    grid, hp = TimeGrid(1.0, 16), HurstParams(0.1)
    f = joint_factor(grid, hp)
    full = sample_joint_paths(f, grid, hp, 1000, 3, stream_layout=128)
    parts = list(iter_path_blocks(f, grid, hp, 1000, 3, stream_layout=128, blocks_per_yield=3))
    assert [p.first_path for p in parts] == [0, 384, 768]
    assert np.array_equal(np.hstack([p.WH for p in parts]), full.WH)


def test_factor_grid_mismatch():
    grid, hp = TimeGrid(1.0, 16), HurstParams(0.1)
    with pytest.raises(ValueError):
        sample_joint_paths(joint_factor(TimeGrid(1.0, 8), hp), grid, hp, 10, 0)


class TestSubsample:
    def test_identity(self):
        b = _sample(0.1, 1.0, 8, 10)
        s = subsample(b, 1)
        assert np.array_equal(s.WH, b.WH) and s.grid == b.grid

    def test_full_stride(self):
        rng = np.random.default_rng(0)
        b = PathBatch(TimeGrid(1.0, 4096), 0.1, rng.standard_normal((4097, 3)),
                      rng.standard_normal((4097, 3)), 0)
        s = subsample(b, 4096)
        assert s.WH.shape == (2, 3)
        assert np.array_equal(s.times, [0.0, 1.0])
        assert np.array_equal(s.W[1], b.W[-1])
        assert np.shares_memory(s.WH, b.WH)

    def test_non_divisor(self):
        with pytest.raises(ValueError):
            subsample(_sample(0.1, 1.0, 8, 2), 3)

    def test_rows(self):
        b = _sample(0.3, 1.0, 16, 5)
        s = subsample(b, 4)
        assert np.array_equal(s.WH, b.WH[[0, 4, 8, 12, 16]])


class TestMoments:
    def test_zero_batch(self):
        g = TimeGrid(1.0, 4)
        b = PathBatch(g, 0.1, np.zeros((5, 10)), np.zeros((5, 10)), 0)
        for m in empirical_moments(b).values():
            for arr in (m.mean, m.var, m.m4, m.var_se):
                assert np.all(arr == 0)

    def test_needs_two_paths(self):
        with pytest.raises(ValueError):
            empirical_moments(_sample(0.1, 1.0, 4, 1))

    @pytest.mark.parametrize("H", [0.05, 0.25])
    def test_variance_and_isserlis(self, batch_factory, H):
        b = batch_factory(H, 1.0, 16, 100_000, 2)
        t = b.times[1:]
        m = empirical_moments(b)
        assert within_se(m["WH"].mean[1:], 0.0, m["WH"].mean_se[1:])
        assert within_se(m["WH"].var[1:], t ** (2 * H), m["WH"].var_se[1:])
        assert within_se(m["WH"].m4[1:], 3 * t ** (4 * H), m["WH"].m4_se[1:])
        assert within_se(m["W"].var[1:], t, m["W"].var_se[1:])
        assert within_se(m["W"].m4[1:], 3 * t**2, m["W"].m4_se[1:])


def test_joint_covariance_within_se(batch_factory):
    H = 0.1
    b = batch_factory(H, 1.0, 16, 100_000, 2)
    hp = HurstParams(H)
    t = b.times
    for i in range(1, 17):
        for j in range(1, 17):
            prod = b.WH[i] * b.W[j]
            se = prod.std(ddof=1) / np.sqrt(b.M)
            assert abs(prod.mean() - cov_fbm_bm(t[i], t[j], hp)) <= 5 * se, (i, j)


def test_brownian_increments_uncorrelated(batch_factory):
    b = batch_factory(0.1, 1.0, 16, 100_000, 2)
    dW = np.diff(b.W, axis=0)
    M = b.M
    for i, j in [(0, 1), (0, 15), (3, 9), (7, 8)]:
        r = np.corrcoef(dW[i], dW[j])[0, 1]
        assert abs(r) <= 5 / np.sqrt(M)


def test_dump_load_roundtrip(tmp_path):
    b = _sample(0.15, 2.0, 8, 37, seed=123, stream_layout=16)
    path = tmp_path / "batch.bin"
    dump_batch(b, path)
    raw = path.read_bytes()
    assert raw[:4] == b"RWPB"
    assert len(raw) == 64 + 2 * 9 * 37 * 8
    c = load_batch(path)
    assert np.array_equal(c.WH, b.WH) and np.array_equal(c.W, b.W)
    assert (c.H, c.grid, c.seed, c.stream_layout) == (b.H, b.grid, b.seed, b.stream_layout)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(ValueError):
        load_batch(p)
