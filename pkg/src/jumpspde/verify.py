"""Numerical checks of well-posedness and differentiability of the solution map.

Every check runs on common random numbers: the perturbed and unperturbed runs,
and all sensitivity systems, are driven by the same noise realizations.
Remainder tables carry the ratio ``r(2 eps) / r(eps)`` between consecutive
rows; for C^2 coefficients with polynomially growing derivatives the expected
regime is O(eps), so ratios near 2. This rate is a property of the fixtures,
not a proven statement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .faadibruno import assemble_correction
from .norms import dp_metric, running_sup, sp_stat
from .solver import Ensemble, PathSample, mild_map, solve_mild, solve_system
from .noise import sample_noise
from .coefficients import DerivativeOrderError, eval_derivative, zero_set

GATEAUX_BAND = (1.5, 2.5)
FRECHET_BAND = (1.4, 2.6)
TOL_ABS = 1e-12
MAX_BLOWUP = 0.01


class PlanViolation(ValueError):
    pass


@dataclass
class Problem:
    """An ensemble (operator, coefficients, noise law, grid, seed, M) plus the datum u0."""

    ensemble: Ensemble
    u0: np.ndarray
    p: float = 2.0
    window: tuple | None = None

    @property
    def dim(self) -> int:
        return self.ensemble.cs.dim


@dataclass
class RemainderTable:
    eps: list
    stats: list
    direction: str
    p: float
    q: float | None = None
    band: tuple = GATEAUX_BAND
    tol_abs: float = TOL_ABS
    passed: bool = False
    reason: str = ""

    @property
    def remainders(self) -> np.ndarray:
        return np.array([s.estimate for s in self.stats])

    @property
    def ratios(self) -> list:
        r = self.remainders
        return [None] + [float(a / b) if b > 0 else math.inf for a, b in zip(r[:-1], r[1:])]

    def rows(self) -> list[dict]:
        return [
            {"eps": e, "remainder": s.estimate, "se": s.se, "ratio": "" if q is None else q,
             "M": s.n_paths, "blowup_fraction": s.blowup_fraction, "direction": self.direction}
            for e, s, q in zip(self.eps, self.stats, self.ratios)
        ]


def rate_verdict(r: Sequence[float], band=GATEAUX_BAND, tol_abs=TOL_ABS) -> tuple[bool, str]:
    """PASS iff all remainders are below ``tol_abs``, or they decrease to below
    ``tol_abs``, or every consecutive ratio lies in ``band``."""
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        return False, "non-finite remainder"
    if np.all(r <= tol_abs):
        return True, f"all remainders <= {tol_abs:g}"
    decreasing = bool(np.all(np.diff(r) < 0))
    if decreasing and r[-1] <= tol_abs:
        return True, f"decreasing to {r[-1]:.3g} <= {tol_abs:g}"
    ratios = r[:-1] / r[1:]
    if np.all((ratios >= band[0]) & (ratios <= band[1])):
        return True, f"ratios {np.round(ratios, 3).tolist()} within {list(band)}"
    return False, f"ratios {np.round(ratios, 3).tolist()} outside {list(band)}" + ("" if decreasing else "; not decreasing")


def _check_eps(eps):
    eps = [float(e) for e in eps]
    if any(e == 0 for e in eps):
        raise ValueError("eps = 0 is not allowed")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps values must be positive and strictly decreasing")
    return eps


def _collect(parts, n_dirs, n_eps, p, window_label=""):
    """Merge per-chunk ``[dir][eps] -> (sups, blown)`` into EnsembleStatistics."""
    out = []
    for a in range(n_dirs):
        row = []
        for b in range(n_eps):
            sups = np.concatenate([part[a][b][0] for part in parts])
            blown = np.concatenate([part[a][b][1] for part in parts])
            row.append(sp_stat(sups, p, blown, window_label))
        out.append(row)
    return out


def _first_order_stats(problem: Problem, directions, eps, p):
    ens, u0, window = problem.ensemble, problem.u0, problem.window
    op, cs, marks = ens.op, ens.cs, ens.marks
    dirs = [np.asarray(h, dtype=float) for h in directions]

    def job(batch, rows):
        base = solve_mild(op, cs, u0, batch, marks)
        res = []
        for h in dirs:
            y = solve_system(op, cs, u0, [h], batch, marks, base=base).paths[(1,)]
            cells = []
            for e in eps:
                ue = solve_mild(op, cs, u0 + e * h, batch, marks)
                R = (ue - base).scaled(1.0 / e) - y
                cells.append((running_sup(R, window), R.blown))
            res.append(cells)
        return res

    return _collect(ens.map(job), len(dirs), len(eps), p)


def _finish(table: RemainderTable) -> RemainderTable:
    worst = max(s.blowup_fraction for s in table.stats)
    if worst > MAX_BLOWUP:
        table.passed, table.reason = False, f"blowup fraction {worst:.3g} exceeds {MAX_BLOWUP:g}"
        return table
    table.passed, table.reason = rate_verdict(table.remainders, table.band, table.tol_abs)
    return table


def gateaux_test(problem: Problem, h, eps: Sequence[float], p: float | None = None,
                 tol_abs: float = TOL_ABS, band=GATEAUX_BAND) -> RemainderTable:
    """Remainder ``|| (u(u0 + eps h) - u(u0)) / eps - y ||_{S^p}`` for each eps."""
    eps = _check_eps(eps)
    p = problem.p if p is None else p
    stats = _first_order_stats(problem, [h], eps, p)[0]
    return _finish(RemainderTable(eps, stats, _describe(h), p, band=band, tol_abs=tol_abs))


@dataclass
class FrechetTable:
    eps: list
    max_remainder: list
    argmax: list
    per_direction: list  # [direction][eps] EnsembleStatistic
    p: float
    q: float | None
    band: tuple = FRECHET_BAND
    passed: bool = False
    reason: str = ""

    @property
    def ratios(self):
        r = self.max_remainder
        return [None] + [a / b if b > 0 else math.inf for a, b in zip(r[:-1], r[1:])]

    def rows(self) -> list[dict]:
        return [{"eps": e, "max_remainder": r, "argmax_direction": k, "ratio": "" if q is None else q}
                for e, r, k, q in zip(self.eps, self.max_remainder, self.argmax, self.ratios)]


def frechet_test(problem: Problem, directions: Sequence, eps: Sequence[float], p: float | None = None,
                 q: float | None = None, tol_abs: float = TOL_ABS, band=FRECHET_BAND,
                 min_directions: int = 8) -> FrechetTable:
    """Max over a finite direction set (inside the unit ball) of the first-order remainder."""
    eps = _check_eps(eps)
    p = problem.p if p is None else p
    if q is not None and not q > p:
        raise PlanViolation(f"Frechet differentiability along L^q needs q > p (q={q}, p={p})")
    dirs = [np.asarray(h, dtype=float) for h in directions]
    if len(dirs) < min_directions:
        raise ValueError(f"need at least {min_directions} directions, got {len(dirs)}")
    if any(np.linalg.norm(h) > 1 + 1e-12 for h in dirs):
        raise ValueError("directions must lie in the unit ball")
    stats = _first_order_stats(problem, dirs, eps, p)
    R = np.array([[s.estimate for s in row] for row in stats])  # (dirs, eps)
    mx = R.max(axis=0)
    table = FrechetTable(eps, mx.tolist(), R.argmax(axis=0).tolist(), stats, p, q, band)
    worst = max(s.blowup_fraction for row in stats for s in row)
    if worst > MAX_BLOWUP:
        table.reason = f"blowup fraction {worst:.3g} exceeds {MAX_BLOWUP:g}"
        return table
    table.passed, table.reason = rate_verdict(mx, band, tol_abs)
    return table


def unit_directions(d: int, count: int, seed: int = 0) -> list[np.ndarray]:
    """Coordinate axes first, then random unit vectors, ``count`` in total."""
    rng = np.random.default_rng(seed)
    dirs = [np.eye(d)[k] for k in range(min(d, count))]
    while len(dirs) < count:
        v = rng.standard_normal(d)
        dirs.append(v / np.linalg.norm(v))
    return dirs


# --- exponent bookkeeping -------------------------------------------------


def _frac(x) -> Fraction | None:
    """Exact rational from int/str/decimal float; ``None`` encodes +infinity."""
    if isinstance(x, Fraction):
        return x
    if x is None or (isinstance(x, float) and math.isinf(x)) or (isinstance(x, str) and x.strip() in ("inf", "+inf")):
        return None
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _inv(x: Fraction | None) -> Fraction:
    return Fraction(0) if x is None else 1 / x


def rising_factor(n: int, m) -> Fraction:
    """``(m+n)!/(m+1)! = (m+2)(m+3)...(m+n)``, valid for real ``m >= 0``."""
    m = _frac(m)
    out = Fraction(1)
    for k in range(2, n + 1):
        out *= m + k
    return out


@dataclass
class PlanCheck:
    name: str
    inequality: str
    holds: bool
    slack: Fraction


@dataclass
class PlanReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.holds for c in self.checks)

    @property
    def binding(self) -> PlanCheck:
        failed = [c for c in self.checks if not c.holds]
        pool = failed or self.checks
        return min(pool, key=lambda c: c.slack)

    def get(self, name: str) -> PlanCheck:
        return next(c for c in self.checks if c.name == name)

    def rows(self) -> list[dict]:
        return [{"check": c.name, "inequality": c.inequality, "holds": c.holds, "slack": str(c.slack)}
                for c in self.checks]


def exponent_plan_check(n: int, m, p, q, p0=None, ps: Sequence | None = None) -> PlanReport:
    """Evaluate the integrability conditions in exact rational arithmetic.

    * ``factorial``: q > (m+n)!/(m+1)! p (n-th order Frechet differentiability)
    * ``sensitivity_range``: q > (n + nm - m) p (u^(n) maps L^q into S^p)
    * ``recursion`` (when p0 is given): (n-1)/p0 + sum 1/p_i <= 1/p, with
      p_i = q unless ``ps`` is supplied; with p_i = q it also records the
      implied bounds q >= n p and p0 >= (n-1) p.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m, p, q = _frac(m), _frac(p), _frac(q)
    if p is None or p <= 0 or m < 0 or (q is not None and q <= 0):
        raise ValueError("need p > 0, q > 0, m >= 0")
    rep = PlanReport()
    qv = q if q is not None else Fraction(10**18)

    fac = rising_factor(n, m)
    rep.checks.append(PlanCheck("factorial", f"q > {fac} * p = {fac * p}", qv > fac * p, qv - fac * p))
    rem = n + n * m - m
    rep.checks.append(PlanCheck("sensitivity_range", f"q > (n+nm-m) p = {rem * p}", qv > rem * p, qv - rem * p))
    if p0 is not None or ps is not None:
        p0f = _frac(p0) if p0 is not None else None
        if ps is None:
            psf = [q] * n
        else:
            if len(ps) != n:
                raise ValueError(f"expected {n} exponents p_1..p_n, got {len(ps)}")
            psf = [_frac(x) for x in ps]
        lhs = (n - 1) * _inv(p0f) + sum(_inv(x) for x in psf)
        rep.checks.append(PlanCheck("recursion", f"(n-1)/p0 + sum 1/p_i = {lhs} <= 1/p = {1 / p}",
                                    lhs <= 1 / p, 1 / p - lhs))
        if ps is None and lhs <= 1 / p:
            rep.checks.append(PlanCheck("implied_q", f"q >= n p = {n * p}", qv >= n * p, qv - n * p))
            p0v = p0f if p0f is not None else Fraction(10**18)
            rep.checks.append(PlanCheck("implied_p0", f"p0 >= (n-1) p = {(n - 1) * p}",
                                        p0v >= (n - 1) * p, p0v - (n - 1) * p))
    return rep


@dataclass(frozen=True)
class ExponentPlan:
    n: int
    m: float
    p: float
    q: float
    p0: float | None = None
    ps: tuple | None = None

    @classmethod
    def for_order(cls, n: int, m, p, q) -> "ExponentPlan":
        chk = exponent_plan_check(n, m, p, q).get("factorial")
        if not chk.holds:
            raise PlanViolation(f"plan violates {chk.inequality} (q = {q})")
        return cls(n, m, p, q)

    @classmethod
    def for_recursion(cls, n: int, m, p, q, p0, ps=None) -> "ExponentPlan":
        chk = exponent_plan_check(n, m, p, q, p0, ps).get("recursion")
        if not chk.holds:
            raise PlanViolation(f"plan violates {chk.inequality}")
        return cls(n, m, p, q, p0, None if ps is None else tuple(ps))


def minimal_q(n: int, m, p) -> float:
    """A convenient q strictly above the factorial threshold."""
    thr = rising_factor(n, m) * _frac(p)
    return float(math.floor(thr) + 1)


# --- higher order ----------------------------------------------------------


def higher_order_test(problem: Problem, directions: Sequence, eps: Sequence[float], p: float | None = None,
                      q: float | None = None, tol_abs: float = TOL_ABS, band=GATEAUX_BAND) -> RemainderTable:
    """Remainder of the order-n quotient
    ``(u^(n-1)(u0 + eps h_n)(h_1..h_{n-1}) - u^(n-1)(u0)(h_1..h_{n-1})) / eps - u^(n)(u0)(h_1..h_n)``."""
    eps = _check_eps(eps)
    p = problem.p if p is None else p
    dirs = [np.asarray(h, dtype=float) for h in directions]
    n = len(dirs)
    cs = problem.ensemble.cs
    if n < 1 or n > cs.n_max:
        raise DerivativeOrderError(n, cs.n_max)
    if q is None:
        q = minimal_q(n, cs.m, p)
    ExponentPlan.for_order(n, cs.m, p, q)
    if n == 1:
        t = gateaux_test(problem, dirs[0], eps, p, tol_abs, band)
        t.q = q
        return t

    ens, u0, window = problem.ensemble, problem.u0, problem.window
    op, marks = ens.op, ens.marks
    low = tuple(range(1, n))
    full = tuple(range(1, n + 1))

    def job(batch, rows):
        sysf = solve_system(op, cs, u0, dirs, batch, marks)
        res = []
        for e in eps:
            syse = solve_system(op, cs, u0 + e * dirs[-1], dirs[:-1], batch, marks)
            R = (syse.paths[low] - sysf.paths[low]).scaled(1.0 / e) - sysf.paths[full]
            res.append((running_sup(R, window), R.blown))
        return [res]

    stats = _collect(ens.map(job), 1, len(eps), p)[0]
    desc = "(" + ", ".join(_describe(h) for h in dirs) + ")"
    return _finish(RemainderTable(eps, stats, desc, p, q, band, tol_abs))


def chainrule_test(problem: Problem, directions: Sequence, eps: Sequence[float], which: str = "f",
                   p: float | None = None, band=GATEAUX_BAND, tol_abs: float = TOL_ABS) -> RemainderTable:
    """Differentiate the order-n correction along the flow in direction ``h_{n+1}``.

    ``directions`` holds ``h_1..h_{n+1}``. Checks
    ``D Psi_n = Psi_{n+1} - D^2F(u)(u'(h_{n+1}), u^(n)(h_1..h_n))`` pathwise by a
    difference quotient in the initial datum.
    """
    eps = _check_eps(eps)
    p = problem.p if p is None else p
    dirs = [np.asarray(h, dtype=float) for h in directions]
    n = len(dirs) - 1
    if n < 1:
        raise ValueError("need at least two directions")
    ens, u0, window = problem.ensemble, problem.u0, problem.window
    op, cs, marks = ens.op, ens.cs, ens.marks
    z = float(marks.quadrature()[0][0]) if which == "G" else None
    low = tuple(range(1, n + 1))

    def correction(system, labels, M, N):
        t = system.base.times.reshape(-1)
        base = system.base.values.reshape(M * N, -1)
        sens = {S: P.values.reshape(M * N, -1) for S, P in system.paths.items()}
        return assemble_correction(cs, which, base, sens, labels, t, z)

    def job(batch, rows):
        sysf = solve_system(op, cs, u0, dirs, batch, marks)
        M, N = sysf.base.times.shape
        base = sysf.base.values.reshape(M * N, -1)
        t = sysf.base.times.reshape(-1)
        psi_n = correction(sysf, low, M, N)
        target = correction(sysf, low + (n + 1,), M, N) - eval_derivative(
            cs, which, 2, t, base,
            [sysf.paths[(n + 1,)].values.reshape(M * N, -1), sysf.paths[low].values.reshape(M * N, -1)], z)
        blown = sysf.base.blown
        res = []
        for e in eps:
            syse = solve_system(op, cs, u0 + e * dirs[-1], dirs[:-1], batch, marks)
            R = ((correction(syse, low, M, N) - psi_n) / e - target).reshape(M, N, -1)
            P = PathSample(sysf.base.times, R, R, sysf.base.jump, sysf.base.path_index, sysf.base.blowup)
            res.append((running_sup(P, window), blown | syse.base.blown))
        return [res]

    stats = _collect(ens.map(job), 1, len(eps), p)[0]
    return _finish(RemainderTable(eps, stats, f"chainrule[{which}] n={n}", p, None, band, tol_abs))


# --- Lipschitz dependence and the contraction mechanism --------------------


@dataclass
class LipschitzTable:
    rows_: list
    passed: bool
    reason: str

    def rows(self):
        return self.rows_


def lipschitz_test(problem: Problem, n_pairs: int = 50, magnitudes: Sequence[float] = (1e-3, 1e-2, 1e-1, 1.0),
                   p: float | None = None, spread: float = 0.5, seed: int = 1, max_band: float = 10.0) -> LipschitzTable:
    """Quotients ``||u(a) - u(b)||_{S^p} / ||a - b||`` over random pairs.

    Pair ``k`` has a random base point ``a`` around ``u0`` and ``b = a + delta e``
    with one fixed unit vector ``e`` and ``delta`` cycling through ``magnitudes``.
    """
    p = problem.p if p is None else p
    ens = problem.ensemble
    rng = np.random.default_rng(seed)
    d = problem.dim
    e = rng.standard_normal(d)
    e /= np.linalg.norm(e)
    rows = []
    for k in range(n_pairs):
        a = problem.u0 + spread * rng.standard_normal(d)
        delta = float(magnitudes[k % len(magnitudes)])
        b = a + delta * e
        if delta == 0:
            dist = sp_stat(running_sup(ens.solve(a) - ens.solve(b), problem.window), p).estimate
            rows.append({"pair": k, "delta": 0.0, "distance": dist, "quotient": ""})
            continue
        ua, ub = ens.solve(a), ens.solve(b)
        diff = ua - ub
        st = sp_stat(running_sup(diff, problem.window), p, diff.blown)
        rows.append({"pair": k, "delta": delta, "distance": st.estimate, "quotient": st.estimate / delta})
    qs = np.array([r["quotient"] for r in rows if r["quotient"] != ""], dtype=float)
    if qs.size == 0:
        return LipschitzTable(rows, True, "no nonzero pairs")
    band = qs.max() / qs.min() if qs.min() > 0 else math.inf
    ok = band <= max_band
    return LipschitzTable(rows, bool(ok), f"max/min quotient {band:.4g} {'<=' if ok else '>'} {max_band:g}")


@dataclass
class ContractionTable:
    rows_: list
    passed: bool
    reason: str

    def rows(self):
        return self.rows_

    @property
    def factors(self):
        return [r["factor"] for r in self.rows_]


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return a / b


def contraction_diagnostic(problem: Problem, T0s: Sequence[float], path_index: int = 0, offset: float = 0.5,
                           p: float | None = None) -> ContractionTable:
    """Empirical contraction factor of the mild map on one frozen noise path.

    Starts ``u`` (free flow of u0) and ``v = u + offset e``; reports
    ``max(d(Gu, Gv)/d(u, v), d(G^2u, G^2v)/d(Gu, Gv))`` on ``[0, T0]``.
    PASS iff the factor is < 1 at the smallest T0 and does not increase as T0
    shrinks.
    """
    p = problem.p if p is None else p
    ens = problem.ensemble
    op, cs, marks = ens.op, ens.cs, ens.marks
    full = sample_noise(marks, cs.d_w, ens.T, ens.dt, ens.seed, path_index)
    e = np.ones(problem.dim) / np.sqrt(problem.dim)
    rows = []
    for T0 in sorted(T0s, reverse=True):
        noise = full.truncate(T0)
        u = solve_mild(op, zero_set(cs.dim, cs.d_w), problem.u0, noise, marks)
        v = PathSample(u.times, u.values + offset * e, u.left + offset * e, u.jump, u.path_index, u.blowup)
        gu, gv = mild_map(op, cs, problem.u0, noise, u, marks), mild_map(op, cs, problem.u0, noise, v, marks)
        g2u, g2v = mild_map(op, cs, problem.u0, noise, gu, marks), mild_map(op, cs, problem.u0, noise, gv, marks)
        d0, d1, d2 = dp_metric(u, v, p), dp_metric(gu, gv, p), dp_metric(g2u, g2v, p)
        f1, f2 = _ratio(d1, d0), _ratio(d2, d1)
        rows.append({"T0": T0, "factor": max(f1, f2), "first": f1, "second": f2})
    f = [r["factor"] for r in rows]  # ordered by decreasing T0
    smallest_ok = f[-1] < 1
    shrinking = all(b <= a * (1 + 1e-12) for a, b in zip(f, f[1:]))
    ok = smallest_ok and shrinking
    reason = f"factor {f[-1]:.4g} at T0={rows[-1]['T0']:g}" + ("" if shrinking else "; not decreasing with T0")
    return ContractionTable(rows, ok, reason)


def fixed_point_residual(problem: Problem, path_index: int = 0) -> float:
    """max |Gamma(u0, u) - u| for the stepper's own path (zero up to rounding)."""
    ens = problem.ensemble
    op, cs, marks = ens.op, ens.cs, ens.marks
    noise = sample_noise(marks, cs.d_w, ens.T, ens.dt, ens.seed, path_index)
    u = solve_mild(op, cs, problem.u0, noise, marks)
    g = mild_map(op, cs, problem.u0, noise, u, marks)
    return float(np.max(np.abs(g.values - u.values)))


def _describe(h) -> str:
    h = np.asarray(h, dtype=float)
    return f"|h|={np.linalg.norm(h):.6g}"
