import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpspde.coefficients import (
    AffineDiffusion,
    AffineDrift,
    AffineJump,
    CoefficientSet,
    DerivativeOrderError,
    GammaFunction,
    NemytskiiDiffusion,
    NemytskiiJump,
    eval_derivative,
    gamma_eval,
    linear_set,
    make_affine,
    make_nemytskii,
    nemytskii_set,
    random_matrix,
)


def adaptive_simpson(f, a, b, tol):
    def simpson(a, b, fa, fm, fb):
        return (b - a) / 6 * (fa + 4 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left, right = simpson(a, m, fa, flm, fm), simpson(m, b, fm, frm, fb)
        if abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15
        return rec(a, m, fa, flm, fm, left, tol / 2) + rec(m, b, fm, frm, fb, right, tol / 2)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol)


# central difference weights for the j-th derivative (O(h^4) accurate)
FD = {
    1: ([-2, -1, 1, 2], [1 / 12, -8 / 12, 8 / 12, -1 / 12]),
    2: ([-2, -1, 0, 1, 2], [-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12]),
    3: ([-3, -2, -1, 1, 2, 3], [1 / 8, -1, 13 / 8, -13 / 8, 1, -1 / 8]),
}


def central_diff(fn, x, v, j, h):
    offs, w = FD[j]
    return sum(wk * fn(x + k * h * v) for k, wk in zip(offs, w)) / h**j


# --- gamma -----------------------------------------------------------------


def test_gamma_values():
    assert gamma_eval(0.0) == 0.0
    assert gamma_eval(math.sqrt(math.pi / 2), 1) == pytest.approx(1.0, abs=1e-15)
    oracle = adaptive_simpson(lambda s: math.sin(s * s), 0.0, 1.0, 1e-10)
    assert gamma_eval(1.0) == pytest.approx(oracle, abs=1e-10)
    assert round(float(gamma_eval(1.0)), 4) == 0.3103


@pytest.mark.parametrize("r", [-2.5, -0.3, 0.7, 1.9, 4.0])
def test_gamma_against_quadrature(r):
    oracle = adaptive_simpson(lambda s: math.sin(s * s), 0.0, r, 1e-11)
    assert gamma_eval(r) == pytest.approx(oracle, abs=1e-9)


def test_gamma_closed_form_derivatives():
    r = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(gamma_eval(r, 1), np.sin(r**2), atol=1e-15)
    np.testing.assert_allclose(gamma_eval(r, 2), 2 * r * np.cos(r**2), atol=1e-14)
    np.testing.assert_allclose(gamma_eval(r, 3), 2 * np.cos(r**2) - 4 * r**2 * np.sin(r**2), atol=1e-13)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
def test_gamma_derivatives_by_finite_difference(order):
    g = GammaFunction(6)
    r = np.linspace(-1.5, 1.5, 7)
    h = 1e-3
    fd = (g(r + h, order - 1) * 8 - g(r + 2 * h, order - 1) - 8 * g(r - h, order - 1) + g(r - 2 * h, order - 1)) / (12 * h)
    np.testing.assert_allclose(g(r, order), fd, atol=1e-8)


def test_gamma_growth_bound():
    r = np.linspace(-50, 50, 2001)
    assert np.all(np.abs(gamma_eval(r, 1)) <= 1.0)
    for j in (2, 3, 4):
        # |gamma^(j)(r)| <= c_j (1 + |r|^(j-1))
        ratio = np.abs(gamma_eval(r, j)) / (1 + np.abs(r) ** (j - 1))
        assert ratio.max() < 2 ** j


def test_gamma_order_and_range_errors():
    g = GammaFunction(3)
    with pytest.raises(DerivativeOrderError, match="j=4, n_max=3"):
        g(1.0, 4)
    with pytest.raises(ValueError):
        gamma_eval(2e6)


# --- Nemytskii -------------------------------------------------------------


def test_nemytskii_zero_state():
    f = make_nemytskii(random_matrix(4, 0.5, 1))
    v = np.ones(4)
    assert np.all(f.value(0, np.zeros(4)) == 0)
    assert np.all(f.derivative(1, 0, np.zeros(4), [v]) == 0)


def test_nemytskii_second_derivative_scalar():
    f = make_nemytskii(np.array([[1.0]]))
    one = np.array([1.0])
    assert f.derivative(2, 0, one, [one, one])[0, 0] == pytest.approx(2 * math.cos(1.0), rel=1e-15)
    fd = central_diff(lambda x: f.derivative(1, 0, x, [one]), one, one, 1, 1e-3)
    assert f.derivative(2, 0, one, [one, one])[0, 0] == pytest.approx(fd[0, 0], rel=1e-6)


def test_nemytskii_third_derivative_scalar():
    f = make_nemytskii(np.array([[1.0]]))
    x, one = np.array([0.8]), np.array([1.0])
    fd = central_diff(lambda y: f.value(0, y), x, one, 3, 1e-2)
    assert f.derivative(3, 0, x, [one] * 3)[0, 0] == pytest.approx(fd[0, 0], rel=1e-4)


def test_nemytskii_growth_audit(rng):
    f = make_nemytskii(random_matrix(6, 0.5, 3))
    bounds = []
    for R in (1.0, 10.0, 100.0):
        x = rng.standard_normal((1000, 6))
        x *= (R * rng.random((1000, 1))) / np.linalg.norm(x, axis=1, keepdims=True)
        # operator norm of D^2 f(x) by the max over random unit pairs
        v = rng.standard_normal((1000, 6))
        w = rng.standard_normal((1000, 6))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        d2 = np.linalg.norm(f.derivative(2, 0, x, [v, w]), axis=1)
        bounds.append(np.max(d2 / (1 + np.linalg.norm(x, axis=1))))
    # ||L||^3 bound of the closed form, uniform in R
    assert max(bounds) <= 2 * 0.5**3 * (1 + 1e-12) * np.sqrt(6)


# --- affine ----------------------------------------------------------------


def power_iteration(A, iters=500, seed=0):
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    for _ in range(iters):
        v = A.T @ (A @ v)
        v /= np.linalg.norm(v)
    return float(np.linalg.norm(A @ v))


def test_affine_basics(rng):
    F0, F1 = rng.standard_normal(5) * 0.1, rng.standard_normal((5, 5))
    f = make_affine(F0, F1)
    np.testing.assert_array_equal(f.value(0, np.zeros(5))[0], F0)
    x, v, w = rng.standard_normal((3, 5))
    assert np.all(f.derivative(2, 0, x, [v, w]) == 0)
    np.testing.assert_allclose(f.derivative(1, 0, x, [v])[0], F1 @ v, rtol=1e-14)


def test_affine_lipschitz_metadata(rng):
    F1 = rng.standard_normal((6, 6))
    f = AffineDrift(np.zeros(6), F1)
    assert f.lipschitz == pytest.approx(power_iteration(F1), rel=1e-9)
    x, y = rng.standard_normal((2, 2000, 6))
    q = np.linalg.norm(f.value(0, x) - f.value(0, y), axis=1) / np.linalg.norm(x - y, axis=1)
    assert q.max() <= f.lipschitz * (1 + 1e-12)
    cs = CoefficientSet(f, AffineDiffusion(np.zeros((6, 1))), AffineJump(np.zeros(6)))
    assert cs.C_f == pytest.approx(f.lipschitz)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        AffineDrift(np.zeros(3), np.eye(4))
    with pytest.raises(ValueError):
        CoefficientSet(AffineDrift(np.zeros(3), np.eye(3)), AffineDiffusion(np.zeros((2, 1))), AffineJump(np.zeros(3)))


# --- eval_derivative over built-in sets ------------------------------------


def _multiplicative(d=3, d_w=2):
    return nemytskii_set(d, d_w, L_norm=0.8, seed=5, multiplicative=True)


SETS = {
    "linear": lambda: linear_set(3, 2, seed=1),
    "nemytskii": lambda: nemytskii_set(3, 2, L_norm=0.8, seed=2),
    "multiplicative": _multiplicative,
}


@pytest.mark.parametrize("name", SETS)
@pytest.mark.parametrize("which", ["f", "B", "G"])
@pytest.mark.parametrize("j", [1, 2, 3])
def test_finite_difference_consistency(name, which, j):
    cs = SETS[name]()
    rng = np.random.default_rng(j)
    z = 0.7 if which == "G" else None
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(3)
        vs = [rng.standard_normal(3) for _ in range(j)]
        exact = eval_derivative(cs, which, j, 0.0, x, vs, z)[0]
        # polarization-free check: differentiate D^(j-1) along v_j
        if j == 1:
            fn = lambda y: cs.value(which, 0.0, y, z)[0]
        else:
            fn = lambda y: eval_derivative(cs, which, j - 1, 0.0, y, vs[:-1], z)[0]
        fd = central_diff(fn, x, vs[-1], 1, 1e-3)
        scale = max(np.max(np.abs(exact)), 1e-3)
        worst = max(worst, np.max(np.abs(exact - fd)) / scale)
    assert worst <= 1e-4


def test_third_order_central_difference_scalar_set():
    cs = nemytskii_set(1, 1, L_norm=1.0, seed=0)
    x = np.array([0.9])
    v = np.array([1.0])
    exact = eval_derivative(cs, "f", 3, 0.0, x, [v, v, v])[0, 0]
    fd = central_diff(lambda y: cs.value("f", 0.0, y)[0, 0], x, v, 3, 1e-2)
    assert exact == pytest.approx(fd, rel=1e-4)


@pytest.mark.parametrize("which", ["f", "B", "G"])
def test_symmetry_and_multilinearity(which):
    cs = _multiplicative()
    rng = np.random.default_rng(0)
    z = -0.4 if which == "G" else None
    x = rng.standard_normal(3)
    vs = [rng.standard_normal(3) for _ in range(3)]
    ref = eval_derivative(cs, which, 3, 0.0, x, vs, z)
    for perm in itertools.permutations(range(3)):
        out = eval_derivative(cs, which, 3, 0.0, x, [vs[i] for i in perm], z)
        assert np.max(np.abs(out - ref)) <= 1e-12 * np.max(np.abs(ref))
    scaled = eval_derivative(cs, which, 3, 0.0, x, [2.5 * vs[0], vs[1], vs[2]], z)
    assert np.max(np.abs(scaled - 2.5 * ref)) <= 1e-14 * np.max(np.abs(scaled))
    zero = eval_derivative(cs, which, 3, 0.0, x, [vs[0], np.zeros(3), vs[2]], z)
    assert np.all(zero == 0)


def test_first_derivative_bound():
    cs = nemytskii_set(5, 2, L_norm=0.5, seed=3)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10_000, 5)) * 3
    v = rng.standard_normal((10_000, 5))
    q = np.linalg.norm(eval_derivative(cs, "f", 1, 0.0, x, [v]), axis=1) / np.linalg.norm(v, axis=1)
    assert q.max() <= cs.C_f * (1 + 1e-9)


def test_lipschitz_of_jump_bound(rng):
    G = NemytskiiJump(random_matrix(4, 0.6, 2), GammaFunction(4), a=np.ones(4) * 0.1, s=0.5)
    x, y = rng.standard_normal((2, 500, 4)) * 2
    for z in (-1.0, 0.3, 2.0):
        lhs = np.linalg.norm(G.value(0, x, z) - G.value(0, y, z), axis=1)
        assert np.all(lhs <= G.bound(0, z) * np.linalg.norm(x - y, axis=1) * (1 + 1e-12))


def test_growth_metadata():
    cs = nemytskii_set(4, 2, n_max=4)
    assert cs.m == 3
    assert cs.n_max == 4
    d = NemytskiiDiffusion(np.eye(2), np.ones((2, 1)), GammaFunction(4))
    x = np.array([[0.3, -0.2]])
    assert d.value(0, x).shape == (1, 2, 1)


def test_eval_derivative_errors():
    cs = nemytskii_set(2, 1, n_max=3)
    x, v = np.ones(2), np.ones(2)
    with pytest.raises(DerivativeOrderError) as err:
        eval_derivative(cs, "f", 4, 0.0, x, [v] * 4)
    assert err.value.j == 4 and err.value.n_max == 3
    with pytest.raises(ValueError):
        eval_derivative(cs, "G", 1, 0.0, x, [v])  # no mark
    with pytest.raises(ValueError):
        eval_derivative(cs, "f", 1, 0.0, x, [v], z=1.0)
    with pytest.raises(ValueError):
        eval_derivative(cs, "f", 2, 0.0, x, [v])


def test_split_default_halves():
    cs = linear_set(3, 1)
    g1, g2 = cs.g_split(0.0, 2.0)
    assert g1 == g2 == cs.g_bound(0.0, 2.0) / 2


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(-10, 10, allow_nan=False), seed=st.integers(0, 1000))
def test_multilinearity_property(alpha, seed):
    cs = nemytskii_set(3, 1, seed=1)
    rng = np.random.default_rng(seed)
    x, v, w = rng.standard_normal((3, 3))
    a = eval_derivative(cs, "f", 2, 0.0, x, [alpha * v, w])
    b = alpha * eval_derivative(cs, "f", 2, 0.0, x, [v, w])
    assert np.all(np.abs(a - b) <= 1e-14 * np.maximum(np.abs(b), 1e-300) + 1e-300)
