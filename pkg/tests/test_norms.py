import numpy as np
import pytest

from jumpspde.coefficients import AffineDiffusion, AffineDrift, AffineJump, CoefficientSet, nemytskii_set
from jumpspde.noise import MarkSpace
from jumpspde.norms import (
    EmptyEnsemble,
    MissingSplit,
    dp_metric,
    gp_norm,
    kappa_audit,
    lpq_nu_norm,
    running_sup,
    sp_norm,
)
from jumpspde.solver import Ensemble, PathSample, UnpairedPaths
from jumpspde.spectral import SpectralOperator


def make_paths(values, times=None, index=None):
    values = np.asarray(values, dtype=float)
    M, N = values.shape[:2]
    if values.ndim == 2:
        values = values[..., None]
    times = np.tile(np.linspace(0, 1, N), (M, 1)) if times is None else times
    index = np.arange(M) if index is None else index
    return PathSample(times, values, values.copy(), np.zeros((M, N), bool), index, -np.ones(M, int))


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0, 3.0])
def test_constant_path(p):
    Y = make_paths(np.full((50, 11, 3), 2.0 / np.sqrt(3)))
    assert sp_norm(Y, p).estimate == pytest.approx(2.0, rel=1e-15)


def test_free_flow_sup_at_window_start():
    t = np.linspace(0, 1, 101)
    vals = (np.exp(-3.0 * t) * 2.0)[None, :, None]
    Y = make_paths(vals, times=t[None, :])
    assert sp_norm(Y, 2.0, (0.3, 0.9)).estimate == pytest.approx(2.0 * np.exp(-0.9), rel=1e-14)


def test_window_monotone_exact(rng):
    Y = make_paths(rng.standard_normal((30, 21, 2)))
    a = running_sup(Y, (0.0, 0.4))
    b = running_sup(Y, (0.0, 0.8))
    assert np.all(a <= b)


def test_left_limit_counts_inside_open_window():
    vals = np.zeros((1, 3, 1))
    Y = make_paths(vals)
    Y.left[0, 1, 0] = 5.0  # pre-jump value at t=0.5
    assert running_sup(Y, (0.0, 1.0))[0] == 5.0
    assert running_sup(Y, (0.5, 1.0))[0] == 0.0  # left limit at t0 is outside (t0, t1]


def test_quasi_triangle_reversed(rng):
    p = 0.5
    for _ in range(20):
        Y1 = make_paths(rng.standard_normal((40, 5, 2)))
        Y2 = make_paths(rng.standard_normal((40, 5, 2)))
        lhs = sp_norm(Y1 + Y2, p).estimate
        assert lhs <= 2 ** (1 / p) * (sp_norm(Y1, p).estimate + sp_norm(Y2, p).estimate)


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
def test_dp_triangle(rng, p):
    for _ in range(20):
        Y1, Y2, Y3 = (make_paths(rng.standard_normal((40, 5, 2))) for _ in range(3))
        assert dp_metric(Y1, Y3, p) <= dp_metric(Y1, Y2, p) + dp_metric(Y2, Y3, p) + 1e-12


def test_dp_examples(rng):
    Y = make_paths(rng.standard_normal((10, 4, 2)))
    assert dp_metric(Y, Y, 2.0) == 0.0
    Z = make_paths(rng.standard_normal((10, 4, 2)))
    assert dp_metric(Y, Z, 0.7) == dp_metric(Z, Y, 0.7)
    const = make_paths(np.full((5, 4, 1), 0.3))
    zero = make_paths(np.zeros((5, 4, 1)))
    assert dp_metric(const, zero, 2.0) == pytest.approx(0.3, rel=1e-15)
    four = make_paths(np.full((5, 4, 1), 4.0))
    assert dp_metric(four, zero, 0.5) == pytest.approx(2.0, rel=1e-15)


def test_dp_unpaired(rng):
    Y = make_paths(rng.standard_normal((10, 4, 2)))
    Z = make_paths(rng.standard_normal((10, 4, 2)), index=np.arange(10) + 1)
    with pytest.raises(UnpairedPaths):
        dp_metric(Y, Z, 1.0)


def test_empty_and_bad_p(rng):
    with pytest.raises(EmptyEnsemble):
        sp_norm([], 1.0)
    with pytest.raises(ValueError):
        sp_norm(make_paths(np.ones((2, 3, 1))), 0.0)


def test_blowup_paths_excluded():
    Y = make_paths(np.ones((4, 3, 1)))
    Y.blowup[1] = 2
    Y.values[1, 2] = np.nan
    st = sp_norm(Y, 2.0)
    assert st.estimate == 1.0 and st.n_paths == 3 and st.blowup_fraction == 0.25


MARKS = MarkSpace.finite(2.0, [(1.0, 0.5), (-1.0, 0.5)])


def test_lpq_zero_and_constant():
    N, dt = 50, 0.02
    g0 = np.zeros((8, N, 2, 3))
    assert lpq_nu_norm(g0, dt, MARKS, 2.0, 2.0).estimate == 0.0
    c = 1.7
    g = np.zeros((8, N, 2, 3))
    g[..., 0] = c
    times = np.arange(N) * dt
    tau = 0.6
    est = lpq_nu_norm(g, dt, MARKS, 2.0, 2.0, times=times, window=(0.2, 0.2 + tau)).estimate
    assert est == pytest.approx(c * np.sqrt(2.0 * tau), rel=1e-12)


def test_lpq_wiener_second_moment():
    # g(t, z) = W(t): E int W^2 lam dt on the left-endpoint grid = lam dt^2 N(N-1)/2
    rng = np.random.default_rng(0)
    M, N, dt = 4000, 40, 0.025
    W = np.concatenate([np.zeros((M, 1)), np.cumsum(rng.standard_normal((M, N - 1)) * np.sqrt(dt), axis=1)], axis=1)
    g = np.repeat(W[:, :, None, None], 2, axis=2)
    st = lpq_nu_norm(g, dt, MARKS, 2.0, 2.0)
    exact = np.sqrt(MARKS.intensity * dt * dt * N * (N - 1) / 2)
    assert abs(st.estimate - exact) <= 3 * st.se


def test_gp_branches(rng):
    g = rng.standard_normal((30, 20, 2, 3))
    dt = 0.05
    for p in (0.5, 1.5, 2.0, 3.0):
        z = np.zeros_like(g)
        split = (z, z) if 1 < p < 2 else None
        assert gp_norm(z, dt, MARKS, p, split).estimate == 0.0
    two = gp_norm(g, dt, MARKS, 2.0).estimate
    assert two == pytest.approx(2 * lpq_nu_norm(g, dt, MARKS, 2.0, 2.0).estimate, rel=1e-14)
    # boundary consistency: p = 2 equals the two norms added directly
    direct = lpq_nu_norm(g, dt, MARKS, 2.0, 2.0).estimate + lpq_nu_norm(g, dt, MARKS, 2.0, 2.0).estimate
    assert abs(two - direct) <= 1e-14 * direct
    st = gp_norm(g, dt, MARKS, 1.5, (0.5 * g, 0.5 * g))
    want = 0.5 * lpq_nu_norm(g, dt, MARKS, 1.5, 2.0).estimate + 0.5 * lpq_nu_norm(g, dt, MARKS, 1.5, 1.5).estimate
    assert st.estimate == pytest.approx(want, rel=1e-14)
    assert st.label == "upper bound"
    assert gp_norm(g, dt, MARKS, 0.5).estimate == lpq_nu_norm(g, dt, MARKS, 0.5, 2.0).estimate
    with pytest.raises(MissingSplit):
        gp_norm(g, dt, MARKS, 1.5)


def test_kappa_zero():
    out = kappa_audit(MARKS, 1.0, [0.5, 0.25], 2.0, g=lambda t, z: 0.0 * t)
    assert [r.value for r in out["rows"]] == [0.0, 0.0]


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0, 4.0])
def test_kappa_constant_closed_form(p):
    c, lam = 0.8, MARKS.intensity
    deltas = [0.4, 0.2, 0.1, 0.05]
    ones = lambda t, z: c * np.ones_like(t)
    # explicit split g1 = g2 = c
    out = kappa_audit(MARKS, 1.0, deltas, p, split=(ones, ones))
    for r in out["rows"]:
        want = (p > 1) * c * (lam * r.delta) ** (1 / p) + c * (lam * r.delta) ** 0.5
        assert r.value == pytest.approx(want, rel=1e-12)
    assert out["monotone"]
    # default halving of g
    half = kappa_audit(MARKS, 1.0, deltas, p, g=ones)
    for r, h in zip(out["rows"], half["rows"]):
        assert h.value == pytest.approx(r.value / 2, rel=1e-12)
    if p <= 2:
        vals = [r.value for r in out["rows"]]
        assert all(a / b >= np.sqrt(2) * (1 - 1e-12) for a, b in zip(vals, vals[1:]))


def test_kappa_requires_split_between_1_and_2():
    with pytest.raises(MissingSplit):
        kappa_audit(MARKS, 1.0, [0.5], 1.5, g=lambda t, z: np.ones_like(t))


def test_bootstrap_se_shrinks():
    op = SpectralOperator(np.array([1.0]))
    cs = CoefficientSet(AffineDrift(np.zeros(1), np.zeros((1, 1))), AffineDiffusion(np.full((1, 1), 0.5)), AffineJump(np.array([0.4])))
    ses = []
    for M in (2000, 4000):
        P = Ensemble(op, cs, MARKS, 1.0, 0.01, 3, M).solve(np.array([1.0]))
        ses.append(sp_norm(P, 2.0).se)
    assert 1.2 <= ses[0] / ses[1] <= 1.7


def test_row_format():
    Y = make_paths(np.ones((3, 2, 1)))
    row = sp_norm(Y, 2.0, (0.0, 1.0)).row("S^p", (0.0, 1.0))
    assert list(row) == ["name", "p", "window", "estimate", "se", "M"]
    assert row["window"] == "0:1" and row["M"] == 3


def test_nemytskii_sp_finite():
    ens = Ensemble(SpectralOperator.quadratic(4), nemytskii_set(4, 1), MARKS, 1.0, 0.05, 1, 50)
    st = sp_norm(ens.solve(np.ones(4)), 2.0)
    assert np.isfinite(st.estimate) and st.se >= 0 and st.blowup_fraction == 0
