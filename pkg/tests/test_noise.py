import numpy as np
import pytest
from scipy import stats

from jumpspde.noise import (
    IntensityTooLarge,
    MarkSpace,
    NoiseBatch,
    sample_noise,
    scale_direction_pairing,
    uniform_grid,
)


def _same(a, b):
    return all(
        np.array_equal(getattr(a, f), getattr(b, f))
        for f in ("grid", "wiener_increments", "jump_times", "jump_marks", "jump_nodes")
    )


def test_zero_intensity_gives_uniform_grid():
    nz = sample_noise(MarkSpace.finite(0.0, [(1.0, 1.0)]), 2, 1.0, 0.1, 1, 0)
    assert nz.jump_events == []
    np.testing.assert_allclose(nz.grid, np.linspace(0, 1, 11))


def test_bitwise_reproducible(sym_marks):
    a = sample_noise(sym_marks, 3, 2.0, 0.05, 99, 17)
    b = sample_noise(sym_marks, 3, 2.0, 0.05, 99, 17)
    assert _same(a, b)
    c = sample_noise(sym_marks, 3, 2.0, 0.05, 99, 18)
    assert not np.array_equal(a.wiener_increments[:5], c.wiener_increments[:5])


def test_order_independence(sym_marks):
    fwd = [sample_noise(sym_marks, 1, 1.0, 0.1, 5, i) for i in range(6)]
    back = [sample_noise(sym_marks, 1, 1.0, 0.1, 5, i) for i in reversed(range(6))][::-1]
    assert all(_same(a, b) for a, b in zip(fwd, back))


def test_grid_contains_jumps(sym_marks):
    for i in range(50):
        nz = sample_noise(sym_marks, 1, 1.0, 0.1, 3, i)
        assert np.all(np.diff(nz.grid) > 0)
        assert nz.grid[0] == 0.0 and nz.grid[-1] == 1.0
        np.testing.assert_array_equal(nz.grid[nz.jump_nodes], nz.jump_times)
        assert np.all((nz.jump_times > 0) & (nz.jump_times <= 1.0))
        assert len(set(nz.jump_times.tolist())) == nz.jump_times.size
        assert set(nz.jump_marks.tolist()) <= {1.0, -1.0}


def test_intensity_guard():
    with pytest.raises(IntensityTooLarge, match="intensity too large for desk scale"):
        sample_noise(MarkSpace.finite(1e8, [(1.0, 1.0)]), 1, 1.0, 0.1, 0, 0)


@pytest.mark.parametrize("bad", [dict(T=0.0), dict(base_dt=-1.0), dict(d_w=-1)])
def test_invalid_arguments(sym_marks, bad):
    kw = dict(mark_space=sym_marks, d_w=1, T=1.0, base_dt=0.1, master_seed=0, path_index=0)
    kw.update(bad)
    with pytest.raises(ValueError):
        sample_noise(**kw)


def test_mark_weights_validated():
    with pytest.raises(ValueError):
        MarkSpace.finite(1.0, [(1.0, 0.5), (2.0, 0.4)])
    with pytest.raises(ValueError):
        MarkSpace.finite(-1.0, [(1.0, 1.0)])


def test_event_count_mean():
    lam, M = 2.0, 100_000
    marks = MarkSpace.finite(lam, [(1.0, 1.0)])
    counts = np.array([sample_noise(marks, 0, 1.0, 1.0, 11, i).jump_times.size for i in range(M)])
    assert abs(counts.mean() - lam) <= 3 * np.sqrt(lam / M)

    # chi-square goodness of fit against Poisson(lam T), tail cells pooled
    kmax = 8
    obs = np.array([np.sum(counts == k) for k in range(kmax)] + [np.sum(counts >= kmax)])
    pk = stats.poisson.pmf(np.arange(kmax), lam)
    exp = M * np.append(pk, 1 - pk.sum())
    _, pval = stats.chisquare(obs, exp)
    assert pval > 0.001


def test_wiener_moments():
    M, dt = 100_000, 0.25
    marks = MarkSpace.finite(0.0, [(1.0, 1.0)])
    dW = np.array([sample_noise(marks, 2, 0.25, dt, 4, i).wiener_increments[0] for i in range(M)])
    assert np.all(np.abs(dW.mean(axis=0)) <= 4 * np.sqrt(dt / M))
    var = dW.var(axis=0, ddof=1)
    assert np.all(np.abs(var / dt - 1) <= 5 / np.sqrt(M))


def test_increment_variance_follows_cell_length(sym_marks):
    # normalized increments over jump-split cells are standard normal
    z = []
    for i in range(3000):
        nz = sample_noise(sym_marks, 1, 1.0, 0.5, 8, i)
        z.append(nz.wiener_increments[:, 0] / np.sqrt(np.diff(nz.grid)))
    z = np.concatenate(z)
    assert abs(z.var() - 1) < 5 / np.sqrt(z.size) * np.sqrt(2)


def test_interval_marks_inverse_cdf(rng):
    # density 2z on [0, 1]: mean 2/3
    ms = MarkSpace(1.0, density_grid=np.array([0.0, 1.0]), density_values=np.array([0.0, 2.0]))
    z = ms.sample_marks(rng, 200_000)
    assert abs(z.mean() - 2 / 3) < 4 * np.sqrt(1 / 18 / z.size)
    nodes, w = ms.quadrature()
    assert np.sum(w) == pytest.approx(1.0, abs=1e-12)
    assert np.sum(w * nodes) == pytest.approx(2 / 3, abs=1e-12)
    # empirical CDF vs z^2
    ks = stats.kstest(z, lambda x: np.clip(x, 0, 1) ** 2)
    assert ks.pvalue > 0.001


def test_pairing_returns_same_object(sym_marks):
    nz = sample_noise(sym_marks, 1, 1.0, 0.1, 0, 0)
    assert scale_direction_pairing(nz) is nz
    with pytest.raises(ValueError):
        nz.grid[0] = 1.0


def test_coarsen_preserves_path(sym_marks):
    nz = sample_noise(sym_marks, 2, 1.0, 0.01, 3, 4)
    c = nz.coarsen(4)
    np.testing.assert_allclose(c.wiener_increments.sum(0), nz.wiener_increments.sum(0), atol=1e-13)
    assert set(np.round(uniform_grid(1.0, 0.04), 12)) <= set(np.round(c.grid, 12))
    np.testing.assert_array_equal(c.grid[c.jump_nodes], nz.jump_times)
    assert c.base_dt == pytest.approx(0.04)


def test_truncate(sym_marks):
    nz = sample_noise(sym_marks, 1, 1.0, 0.1, 3, 4)
    tr = nz.truncate(0.5)
    assert tr.T == pytest.approx(0.5)
    assert tr.wiener_increments.shape[0] == tr.grid.size - 1
    with pytest.raises(ValueError):
        nz.truncate(0.55)


def test_batch_padding(sym_marks):
    paths = [sample_noise(sym_marks, 1, 1.0, 0.1, 3, i) for i in range(20)]
    b = NoiseBatch.stack(paths)
    assert b.times.shape[1] == max(p.grid.size for p in paths)
    assert np.all(b.times[:, -1] == 1.0)
    for r, p in enumerate(paths):
        k = p.grid.size
        assert np.all(b.dW[r, k - 1:] == 0)
        assert not b.jump[r, k:].any()
