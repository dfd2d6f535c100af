"""Coefficients f, B, G with multilinear Frechet derivatives.

States are batched: ``x`` has shape ``(M, d)`` (one row per path). Drift and
jump coefficients return ``(M, d)``, the diffusion returns ``(M, d, d_w)``.
Jump coefficients additionally take the mark ``z`` (scalar or shape ``(M,)``).
Derivatives ``derivative(j, t, x, vs, z)`` evaluate ``D^j F(t, z, x)[v_1..v_j]``
with every ``v_i`` shaped like ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import special

GAMMA_RANGE = 1e6
_SQRT_HALF_PI = np.sqrt(np.pi / 2)
_SQRT_2_OVER_PI = np.sqrt(2 / np.pi)


class DerivativeOrderError(ValueError):
    def __init__(self, j: int, n_max: int):
        super().__init__(f"derivative order not available: j={j}, n_max={n_max}")
        self.j = j
        self.n_max = n_max


def _sin_square_derivative_polys(n: int) -> list[tuple[Polynomial, Polynomial]]:
    # d^k/dr^k sin(r^2) = P_k(r) sin(r^2) + Q_k(r) cos(r^2)
    r = Polynomial([0.0, 1.0])
    polys = [(Polynomial([1.0]), Polynomial([0.0]))]
    for _ in range(n):
        P, Q = polys[-1]
        polys.append((P.deriv() - 2 * r * Q, Q.deriv() + 2 * r * P))
    return polys


class GammaFunction:
    """``gamma(r) = int_0^r sin(s^2) ds`` and its derivatives up to ``n_max``.

    gamma itself is a rescaled Fresnel sine integral; ``gamma^(j)`` for
    ``j >= 1`` uses the closed form ``P(r) sin(r^2) + Q(r) cos(r^2)``.
    """

    def __init__(self, n_max: int = 4):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        self.n_max = n_max
        polys = _sin_square_derivative_polys(n_max - 1)
        self._coef = [(P.coef.copy(), Q.coef.copy()) for P, Q in polys]

    def __call__(self, r, order: int = 0):
        return gamma_eval(r, order, self)

    def poly_coefficients(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        return self._coef[order - 1]


def gamma_eval(r, order: int = 0, gamma: GammaFunction | None = None):
    if gamma is None:
        gamma = _default_gamma(max(order, 1))
    if not 0 <= order <= gamma.n_max:
        raise DerivativeOrderError(order, gamma.n_max)
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > GAMMA_RANGE):
        raise ValueError(f"|r| exceeds the supported range {GAMMA_RANGE:g}")
    if order == 0:
        s, _ = special.fresnel(r * _SQRT_2_OVER_PI)
        return _SQRT_HALF_PI * s
    P, Q = gamma.poly_coefficients(order)
    r2 = r * r
    out = np.polynomial.polynomial.polyval(r, P) * np.sin(r2)
    if np.any(Q):
        out = out + np.polynomial.polynomial.polyval(r, Q) * np.cos(r2)
    return out


_GAMMAS: dict[int, GammaFunction] = {}


def _default_gamma(n: int) -> GammaFunction:
    n = max(n, 8)
    if n not in _GAMMAS:
        _GAMMAS[n] = GammaFunction(n)
    return _GAMMAS[n]


def _matvec(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    # einsum without optimize stays off BLAS, so rows never mix
    return np.einsum("ij,mj->mi", L, x)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def _mark_factor(z, M: int):
    z = np.asarray(z, dtype=float)
    return z if z.ndim == 0 else z.reshape(M, 1)


def _check_order(j: int, n_max: int):
    if not 1 <= j <= n_max:
        raise DerivativeOrderError(j, n_max)


# --- drift -----------------------------------------------------------------


class Drift:
    kind = "f"
    n_max: int = 8
    dim: int
    lipschitz: float
    growth: float
    degree: float = 0.0

    def value(self, t, x):
        raise NotImplementedError

    def derivative(self, j, t, x, vs):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class AffineDrift(Drift):
    """``f(x) = F0 + F1 x``."""

    F0: np.ndarray
    F1: np.ndarray
    n_max: int = 8

    def __post_init__(self):
        F0 = np.asarray(self.F0, dtype=float).reshape(-1)
        F1 = np.atleast_2d(np.asarray(self.F1, dtype=float))
        if F1.shape != (F0.size, F0.size):
            raise ValueError(f"F1 must be {F0.size}x{F0.size}, got {F1.shape}")
        object.__setattr__(self, "F0", F0)
        object.__setattr__(self, "F1", F1)

    @property
    def dim(self):
        return self.F0.size

    @cached_property
    def lipschitz(self):
        return float(np.linalg.norm(self.F1, 2))

    @cached_property
    def growth(self):
        return max(self.lipschitz, float(np.linalg.norm(self.F0)))

    def value(self, t, x):
        x = _as_batch(x)
        return self.F0 + _matvec(self.F1, x)

    def derivative(self, j, t, x, vs):
        _check_order(j, self.n_max)
        x = _as_batch(x)
        if j == 1:
            return _matvec(self.F1, _as_batch(vs[0])) + np.zeros_like(x)
        return np.zeros_like(x)


@dataclass(frozen=True, eq=False)
class NemytskiiDrift(Drift):
    """Pointwise composition ``f(x)_k = gamma((L x)_k)``."""

    L: np.ndarray
    gamma: GammaFunction

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        if L.shape[0] != L.shape[1]:
            raise ValueError(f"L must be square, got {L.shape}")
        if not np.all(np.isfinite(L)):
            raise ValueError("L must be finite")
        object.__setattr__(self, "L", L)

    @property
    def dim(self):
        return self.L.shape[0]

    @property
    def n_max(self):
        return self.gamma.n_max

    @property
    def degree(self):
        return float(self.n_max - 1)

    @cached_property
    def lipschitz(self):
        # |gamma'| <= 1 and |gamma(r)| <= |r|
        return float(np.linalg.norm(self.L, 2))

    @property
    def growth(self):
        return self.lipschitz

    def value(self, t, x):
        return gamma_eval(_matvec(self.L, _as_batch(x)), 0, self.gamma)

    def derivative(self, j, t, x, vs):
        _check_order(j, self.n_max)
        out = gamma_eval(_matvec(self.L, _as_batch(x)), j, self.gamma)
        for v in vs:
            out = out * _matvec(self.L, _as_batch(v))
        return out


@dataclass(frozen=True, eq=False)
class ZeroDrift(Drift):
    dim: int
    lipschitz: float = 0.0
    growth: float = 0.0

    def value(self, t, x):
        return np.zeros_like(_as_batch(x))

    def derivative(self, j, t, x, vs):
        _check_order(j, self.n_max)
        return np.zeros_like(_as_batch(x))


@dataclass(frozen=True, eq=False)
class TimeModulated(Drift):
    """``c(t) * base(t, x)`` for a scalar modulation ``c`` with ``|c| <= bound``."""

    base: Drift
    modulation: Callable[[np.ndarray], np.ndarray]
    bound: float = 1.0

    @property
    def dim(self):
        return self.base.dim

    @property
    def n_max(self):
        return self.base.n_max

    @property
    def degree(self):
        return self.base.degree

    @property
    def lipschitz(self):
        return self.bound * self.base.lipschitz

    @property
    def growth(self):
        return self.bound * self.base.growth

    def _c(self, t, M):
        c = np.asarray(self.modulation(np.asarray(t, dtype=float)), dtype=float)
        return c if c.ndim == 0 else c.reshape(M, 1)

    def value(self, t, x):
        x = _as_batch(x)
        return self._c(t, x.shape[0]) * self.base.value(t, x)

    def derivative(self, j, t, x, vs):
        x = _as_batch(x)
        return self._c(t, x.shape[0]) * self.base.derivative(j, t, x, vs)


# --- diffusion -------------------------------------------------------------


class Diffusion:
    kind = "B"
    n_max: int = 8
    dim: int
    d_w: int
    lipschitz: float
    growth: float
    degree: float = 0.0


@dataclass(frozen=True, eq=False)
class AffineDiffusion(Diffusion):
    """``B(x) = B0 + B1 . x`` with ``B1`` of shape ``(d, d_w, d)``."""

    B0: np.ndarray
    B1: np.ndarray | None = None
    n_max: int = 8

    def __post_init__(self):
        B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        d, d_w = B0.shape
        B1 = np.zeros((d, d_w, d)) if self.B1 is None else np.asarray(self.B1, dtype=float)
        if B1.shape != (d, d_w, d):
            raise ValueError(f"B1 must have shape {(d, d_w, d)}, got {B1.shape}")
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "B1", B1)

    @property
    def dim(self):
        return self.B0.shape[0]

    @property
    def d_w(self):
        return self.B0.shape[1]

    @cached_property
    def lipschitz(self):
        if self.B1.size == 0:
            return 0.0
        return float(np.linalg.norm(self.B1.reshape(-1, self.dim), 2))

    @cached_property
    def growth(self):
        return max(self.lipschitz, float(np.linalg.norm(self.B0)))

    def value(self, t, x):
        x = _as_batch(x)
        return self.B0 + np.einsum("kwj,mj->mkw", self.B1, x)

    def derivative(self, j, t, x, vs):
        _check_order(j, self.n_max)
        x = _as_batch(x)
        if j == 1:
            return np.einsum("kwj,mj->mkw", self.B1, _as_batch(vs[0])) + np.zeros((x.shape[0], 1, 1))
        return np.zeros((x.shape[0], self.dim, self.d_w))


@dataclass(frozen=True, eq=False)
class NemytskiiDiffusion(Diffusion):
    """``B(x)_{kw} = B0_{kw} + sigma_{kw} gamma((L x)_k)``."""

    L: np.ndarray
    sigma: np.ndarray
    gamma: GammaFunction
    B0: np.ndarray | None = None

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if L.shape != (L.shape[0], L.shape[0]) or sigma.shape[0] != L.shape[0]:
            raise ValueError("L must be d x d and sigma d x d_w")
        B0 = np.zeros_like(sigma) if self.B0 is None else np.atleast_2d(np.asarray(self.B0, dtype=float))
        if B0.shape != sigma.shape:
            raise ValueError("B0 must match sigma")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "B0", B0)

    @property
    def dim(self):
        return self.L.shape[0]

    @property
    def d_w(self):
        return self.sigma.shape[1]

    @property
    def n_max(self):
        return self.gamma.n_max

    @property
    def degree(self):
        return float(self.n_max - 1)

    @cached_property
    def lipschitz(self):
        return float(np.max(np.linalg.norm(self.sigma, axis=1)) * np.linalg.norm(self.L, 2))

    @cached_property
    def growth(self):
        return max(self.lipschitz, float(np.linalg.norm(self.B0)))

    def value(self, t, x):
        g = gamma_eval(_matvec(self.L, _as_batch(x)), 0, self.gamma)
        return self.B0 + g[:, :, None] * self.sigma

    def derivative(self, j, t, x, vs):
        _check_order(j, self.n_max)
        g = gamma_eval(_matvec(self.L, _as_batch(x)), j, self.gamma)
        for v in vs:
            g = g * _matvec(self.L, _as_batch(v))
        return g[:, :, None] * self.sigma


# --- jumps -----------------------------------------------------------------


class Jump:
    kind = "G"
    n_max: int = 8
    dim: int
    degree: float = 0.0

    def bound(self, t, z):
        """g(t, z): Lipschitz and linear-growth constant at mark z."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class AffineJump(Jump):
    """``G(z, x) = z (a + C x)``."""

    a: np.ndarray
    C: np.ndarray | None = None
    n_max: int = 8

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        C = np.zeros((a.size, a.size)) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape != (a.size, a.size):
            raise ValueError(f"C must be {a.size}x{a.size}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "C", C)

    @property
    def dim(self):
        return self.a.size

    @cached_property
    def _k(self):
        return max(float(np.linalg.norm(self.C, 2)), float(np.linalg.norm(self.a)))

    def bound(self, t, z):
        return np.abs(np.asarray(z, dtype=float)) * self._k

    def value(self, t, x, z):
        x = _as_batch(x)
        return _mark_factor(z, x.shape[0]) * (self.a + _matvec(self.C, x))

    def derivative(self, j, t, x, vs, z):
        _check_order(j, self.n_max)
        x = _as_batch(x)
        if j == 1:
            return _mark_factor(z, x.shape[0]) * _matvec(self.C, _as_batch(vs[0])) + np.zeros_like(x)
        return np.zeros_like(x)


@dataclass(frozen=True, eq=False)
class NemytskiiJump(Jump):
    """``G(z, x)_k = z (a_k + s gamma((L x)_k))``."""

    L: np.ndarray
    gamma: GammaFunction
    a: np.ndarray | None = None
    s: float = 1.0

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        a = np.zeros(L.shape[0]) if self.a is None else np.asarray(self.a, dtype=float).reshape(-1)
        if L.shape != (a.size, a.size):
            raise ValueError("L must be d x d and a of length d")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "a", a)

    @property
    def dim(self):
        return self.L.shape[0]

    @property
    def n_max(self):
        return self.gamma.n_max

    @property
    def degree(self):
        return float(self.n_max - 1)

    @cached_property
    def _k(self):
        return max(abs(self.s) * float(np.linalg.norm(self.L, 2)), float(np.linalg.norm(self.a)))

    def bound(self, t, z):
        return np.abs(np.asarray(z, dtype=float)) * self._k

    def value(self, t, x, z):
        x = _as_batch(x)
        g = gamma_eval(_matvec(self.L, x), 0, self.gamma)
        return _mark_factor(z, x.shape[0]) * (self.a + self.s * g)

    def derivative(self, j, t, x, vs, z):
        _check_order(j, self.n_max)
        x = _as_batch(x)
        g = gamma_eval(_matvec(self.L, x), j, self.gamma)
        for v in vs:
            g = g * _matvec(self.L, _as_batch(v))
        return _mark_factor(z, x.shape[0]) * (self.s * g)


# --- the set ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Coefficients of ``du + Au dt = f dt + B dW + int G dmu_bar``.

    ``G_split`` optionally carries ``(G1, G2)`` with ``G = G1 + G2`` for the
    mixed-norm bookkeeping when ``1 < p < 2``; without it the bounds split as
    ``g1 = g2 = g / 2``.
    """

    f: Drift
    B: Diffusion
    G: Jump
    G_split: tuple[Jump, Jump] | None = None

    def __post_init__(self):
        d = self.f.dim
        if self.B.dim != d or self.G.dim != d:
            raise ValueError(f"dimension mismatch: f={d}, B={self.B.dim}, G={self.G.dim}")

    @property
    def dim(self) -> int:
        return self.f.dim

    @property
    def d_w(self) -> int:
        return self.B.d_w

    @property
    def n_max(self) -> int:
        return min(self.f.n_max, self.B.n_max, self.G.n_max)

    @property
    def C_f(self) -> float:
        return max(self.f.lipschitz, self.f.growth)

    @property
    def C_B(self) -> float:
        return max(self.B.lipschitz, self.B.growth)

    @property
    def m(self) -> float:
        """Polynomial growth degree of the derivatives of order >= 2."""
        return max(self.f.degree, self.B.degree, self.G.degree)

    def g_bound(self, t, z):
        return self.G.bound(t, z)

    def g_split(self, t, z) -> tuple:
        if self.G_split is not None:
            return self.G_split[0].bound(t, z), self.G_split[1].bound(t, z)
        g = self.G.bound(t, z)
        return g / 2, g / 2

    def component(self, which: str):
        try:
            return {"f": self.f, "B": self.B, "G": self.G}[which]
        except KeyError:
            raise ValueError(f"unknown coefficient {which!r}; expected f, B or G") from None

    def value(self, which: str, t, x, z=None):
        if which == "G":
            if z is None:
                raise ValueError("mark z is required for G")
            return self.G.value(t, x, z)
        return self.component(which).value(t, x)


def eval_derivative(cs: CoefficientSet, which: str, j: int, t, x, vs: Sequence, z=None):
    """``D^j F(t, [z,] x)[v_1, ..., v_j]`` for ``F`` one of ``f``, ``B``, ``G``."""
    comp = cs.component(which)
    if not 1 <= j <= cs.n_max:
        raise DerivativeOrderError(j, cs.n_max)
    if len(vs) != j:
        raise ValueError(f"expected {j} directions, got {len(vs)}")
    if which == "G":
        if z is None:
            raise ValueError("mark z is required for G")
        return comp.derivative(j, t, x, vs, z)
    if z is not None:
        raise ValueError(f"mark z is only accepted for G, not {which}")
    return comp.derivative(j, t, x, vs)


# --- constructors ----------------------------------------------------------


def make_nemytskii(L, gamma: GammaFunction | None = None, n_max: int = 4) -> NemytskiiDrift:
    return NemytskiiDrift(L, gamma or GammaFunction(n_max))


def make_affine(F0, F1) -> AffineDrift:
    return AffineDrift(F0, F1)


def make_constant_B(B0) -> AffineDiffusion:
    return AffineDiffusion(B0)


def make_affine_B(B0, B1) -> AffineDiffusion:
    return AffineDiffusion(B0, B1)


def make_affine_G(a, C=None) -> AffineJump:
    return AffineJump(a, C)


def random_matrix(d: int, norm: float, seed: int = 0) -> np.ndarray:
    """Gaussian ``d x d`` matrix rescaled to the given spectral norm."""
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((d, d))
    return L * (norm / np.linalg.norm(L, 2))


def zero_set(d: int, d_w: int) -> CoefficientSet:
    return CoefficientSet(ZeroDrift(d), AffineDiffusion(np.zeros((d, d_w))), AffineJump(np.zeros(d)))


def linear_set(d: int, d_w: int, seed: int = 0, scale: float = 0.3) -> CoefficientSet:
    """Affine drift, constant diffusion, jump coefficient linear in the state."""
    rng = np.random.default_rng(seed)
    F1 = random_matrix(d, scale, seed + 1) - 0.2 * np.eye(d)
    return CoefficientSet(
        AffineDrift(rng.normal(0, 0.1, d), F1),
        AffineDiffusion(rng.normal(0, 0.2, (d, d_w))),
        AffineJump(np.zeros(d), random_matrix(d, scale, seed + 2)),
    )


def nemytskii_set(
    d: int,
    d_w: int,
    L_norm: float = 0.5,
    n_max: int = 4,
    seed: int = 0,
    sigma: float = 0.3,
    jump_scale: float = 0.5,
    multiplicative: bool = False,
) -> CoefficientSet:
    """Drift ``gamma(L x)``, jump ``z (a + s gamma(L_G x))``; additive noise unless ``multiplicative``."""
    rng = np.random.default_rng(seed)
    gamma = GammaFunction(n_max)
    L = random_matrix(d, L_norm, seed + 1)
    B0 = rng.normal(0, sigma / np.sqrt(d_w or 1), (d, d_w))
    if multiplicative:
        B = NemytskiiDiffusion(random_matrix(d, L_norm, seed + 3), B0, gamma, B0=0.5 * B0)
    else:
        B = AffineDiffusion(B0, n_max=n_max)
    G = NemytskiiJump(random_matrix(d, L_norm, seed + 2), gamma, a=rng.normal(0, 0.1, d), s=jump_scale)
    return CoefficientSet(NemytskiiDrift(L, gamma), B, G)
