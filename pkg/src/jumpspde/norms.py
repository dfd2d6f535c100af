"""Monte Carlo estimators of the path-space and random-measure norms.

All estimators exclude paths flagged as blown up and report the excluded
fraction. Standard errors come from a nonparametric bootstrap with its own
seeded generator, so they are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .noise import MarkSpace
from .solver import PathSample

N_BOOTSTRAP = 200
BOOTSTRAP_SEED = 20240917


class EmptyEnsemble(ValueError):
    pass


class MissingSplit(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleStatistic:
    estimate: float
    se: float
    n_paths: int
    p: float
    blowup_fraction: float = 0.0
    label: str = ""

    def row(self, name: str, window=None) -> dict:
        return {
            "name": name,
            "p": self.p,
            "window": "" if window is None else f"{window[0]:g}:{window[1]:g}",
            "estimate": self.estimate,
            "se": self.se,
            "M": self.n_paths,
        }


def _moment_root(samples: np.ndarray, p: float) -> float:
    return float(np.mean(samples**p) ** (1.0 / p))


def bootstrap_power_mean(x: np.ndarray, p: float, n_boot: int = N_BOOTSTRAP, seed: int = BOOTSTRAP_SEED):
    """``(mean x^p)^(1/p)`` and its bootstrap standard error."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise EmptyEnsemble("no usable paths")
    est = _moment_root(x, p)
    if x.size == 1:
        return est, 0.0
    xp = x**p
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, x.size, x.size)
        boots[b] = np.mean(xp[idx]) ** (1.0 / p)
    return est, float(np.std(boots, ddof=1))


def bootstrap_stat(x: np.ndarray, fn: Callable[[np.ndarray], float], n_boot: int = N_BOOTSTRAP,
                   seed: int = BOOTSTRAP_SEED) -> tuple[float, float]:
    """Point value of ``fn(x)`` and its bootstrap standard error (resampling rows)."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    boots = np.array([fn(x[rng.integers(0, len(x), len(x))]) for _ in range(n_boot)])
    return float(fn(x)), float(np.std(boots, ddof=1))


def _window_mask(times: np.ndarray, window, closed_left: bool) -> np.ndarray:
    t0, t1 = window
    tol = 1e-12 * max(1.0, abs(t1))
    lo = times >= t0 - tol if closed_left else times > t0 + tol
    return lo & (times <= t1 + tol)


def running_sup(paths: PathSample, window=None) -> np.ndarray:
    """Per-path ``sup ||Y(t)||`` over grid values and left limits inside the window."""
    vals = paths.values.reshape(paths.n_paths, paths.n_nodes, -1)
    left = paths.left.reshape(paths.n_paths, paths.n_nodes, -1)
    nv = np.sqrt(np.sum(vals * vals, axis=-1))
    nl = np.sqrt(np.sum(left * left, axis=-1))
    if window is None:
        window = (0.0, float(np.max(paths.times)))
    t0, t1 = window
    if t0 < 0 or t1 < t0:
        raise ValueError(f"invalid window {window}")
    mv = _window_mask(paths.times, window, closed_left=True)
    ml = _window_mask(paths.times, window, closed_left=False)
    with np.errstate(invalid="ignore"):
        s = np.maximum(np.max(np.where(mv, nv, -np.inf), axis=1), np.max(np.where(ml, nl, -np.inf), axis=1))
    return s


def _as_sample(paths) -> PathSample:
    if isinstance(paths, PathSample):
        return paths
    paths = list(paths)
    if not paths:
        raise EmptyEnsemble("empty ensemble")
    return PathSample.concat(paths)


def sp_stat(sups: np.ndarray, p: float, blown=None, label: str = "") -> EnsembleStatistic:
    """S^p estimate from per-path suprema."""
    if p <= 0:
        raise ValueError("p must be positive")
    sups = np.asarray(sups, dtype=float)
    if sups.size == 0:
        raise EmptyEnsemble("empty ensemble")
    blown = np.zeros(sups.size, dtype=bool) if blown is None else np.asarray(blown, dtype=bool)
    ok = ~blown & np.isfinite(sups)
    est, se = bootstrap_power_mean(sups[ok], p)
    return EnsembleStatistic(est, se, int(ok.sum()), p, float(1 - ok.mean()), label)


def sp_norm(paths, p: float, window=None) -> EnsembleStatistic:
    """``(E sup_{t in window} ||Y(t)||^p)^(1/p)`` estimated over the ensemble."""
    paths = _as_sample(paths)
    if paths.n_paths == 0:
        raise EmptyEnsemble("empty ensemble")
    return sp_stat(running_sup(paths, window), p, paths.blown)


def dp_metric(Y1, Y2, p: float, window=None) -> float:
    """``||Y1 - Y2||_{S^p}^{min(1, p)}`` for ensembles driven by the same noise."""
    Y1, Y2 = _as_sample(Y1), _as_sample(Y2)
    diff = Y1 - Y2  # raises UnpairedPaths for mismatched noise
    return sp_norm(diff, p, window).estimate ** min(1.0, p)


def _inner_integral(g: np.ndarray, dt: np.ndarray, weights: np.ndarray, intensity: float, q: float,
                    cell_mask=None) -> np.ndarray:
    # g: (M, N, K, ...) -> per path sum_i dt_i * intensity * sum_k w_k ||g||^q
    M, N, K = g.shape[:3]
    nrm = np.sqrt(np.sum(g.reshape(M, N, K, -1) ** 2, axis=-1))
    per_cell = intensity * np.sum(weights * nrm**q, axis=-1) * dt
    if cell_mask is not None:
        per_cell = np.where(cell_mask, per_cell, 0.0)
    return np.sum(per_cell, axis=1)


def _cells(times, dt, M, N, window):
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (M, N)) if np.ndim(dt) else np.full((M, N), float(dt))
    if window is None:
        return dt, None
    if times is None:
        raise ValueError("a window requires the left endpoints of the cells")
    t = np.broadcast_to(np.asarray(times, dtype=float), (M, N))
    tol = 1e-12 * max(1.0, abs(window[1]))
    return dt, (t >= window[0] - tol) & (t + dt <= window[1] + tol)


def lpq_nu_norm(g, dt, marks: MarkSpace, p: float, q: float, times=None, window=None,
                mark_weights=None) -> EnsembleStatistic:
    """``(E (int ||g||^q dnu)^(p/q))^(1/p)`` with ``nu = intensity dt (x) m(dz)``.

    ``g`` has shape ``(M, N, K, ...)``: path, time cell, mark node, state
    components. The mark nodes must be those of ``marks.quadrature()`` unless
    ``mark_weights`` is given. ``dt`` (scalar, ``(N,)`` or ``(M, N)``) are the
    cell lengths and ``times`` their left endpoints.
    """
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    g = np.asarray(g, dtype=float)
    if g.ndim < 3 or g.shape[0] == 0:
        raise EmptyEnsemble("need field samples shaped (M, N, K, ...)")
    M, N, K = g.shape[:3]
    w = marks.quadrature()[1] if mark_weights is None else np.asarray(mark_weights, dtype=float)
    if w.size != K:
        raise ValueError(f"{K} mark nodes in samples but {w.size} weights")
    dt, mask = _cells(times, dt, M, N, window)
    inner = _inner_integral(g, dt, w, marks.intensity, q, mask)
    ok = np.isfinite(inner)
    est, se = bootstrap_power_mean(inner[ok] ** (1.0 / q), p)
    return EnsembleStatistic(est, se, int(ok.sum()), p, float(1 - ok.mean()))


def gp_norm(g, dt, marks: MarkSpace, p: float, split=None, times=None, window=None) -> EnsembleStatistic:
    """Mixed quasi-norm controlling compensated jump convolutions.

    p <= 1: L^p(L^2). 1 < p < 2: ``||g1||_{L^p(L^2)} + ||g2||_{L^p(L^p)}`` for
    the supplied split ``(g1, g2)``, an upper bound for the infimum over
    splits (labelled "upper bound"). p >= 2: both norms of ``g`` added.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    kw = dict(times=times, window=window)
    if p <= 1:
        return lpq_nu_norm(g, dt, marks, p, 2.0, **kw)
    if p < 2:
        if split is None:
            raise MissingSplit("a split g = g1 + g2 is required for 1 < p < 2")
        g1, g2 = split
        a = lpq_nu_norm(g1, dt, marks, p, 2.0, **kw)
        b = lpq_nu_norm(g2, dt, marks, p, p, **kw)
        label = "upper bound"
    else:
        a = lpq_nu_norm(g, dt, marks, p, 2.0, **kw)
        b = lpq_nu_norm(g, dt, marks, p, p, **kw)
        label = ""
    return EnsembleStatistic(a.estimate + b.estimate, a.se + b.se, a.n_paths, p,
                             max(a.blowup_fraction, b.blowup_fraction), label)


@dataclass(frozen=True)
class KappaRow:
    delta: float
    value: float


def kappa_audit(
    marks: MarkSpace,
    T: float,
    deltas: Sequence[float],
    p: float,
    g: Callable | None = None,
    split: tuple[Callable, Callable] | None = None,
    n_time: int = 512,
    n_offsets: int = 16,
) -> dict:
    """Measured left-hand side of the window condition for deterministic ``g(t, z)``.

    For each window length ``delta`` the value is the max over window placements
    ``[t0, t0 + delta] in [0, T]`` of
    ``1_{p>1} (int g1^p dnu)^(1/p) + (int g2^2 dnu)^(1/2)``.
    Without an explicit split, ``g1 = g2 = g / 2`` (only allowed outside (1, 2)).
    """
    if split is None:
        if g is None:
            raise ValueError("need g or an explicit split")
        if 1 < p < 2:
            raise MissingSplit("a split g = g1 + g2 is required for 1 < p < 2")
        g1 = g2 = lambda t, z: 0.5 * np.asarray(g(t, z), dtype=float)
    else:
        g1, g2 = split
    z, w = marks.quadrature()
    lam = marks.intensity
    rows = []
    for delta in sorted(deltas, reverse=True):
        if not 0 < delta <= T:
            raise ValueError(f"window length {delta} outside (0, T]")
        best = 0.0
        for t0 in np.linspace(0.0, T - delta, n_offsets):
            # midpoint rule in time, exact sum over mark nodes
            edges = np.linspace(t0, t0 + delta, n_time + 1)
            tm = 0.5 * (edges[1:] + edges[:-1])
            h = delta / n_time
            a2 = lam * h * sum(wk * np.sum(np.abs(g2(tm, zk)) ** 2) for zk, wk in zip(z, w))
            val = np.sqrt(a2)
            if p > 1:
                ap = lam * h * sum(wk * np.sum(np.abs(g1(tm, zk)) ** p) for zk, wk in zip(z, w))
                val += ap ** (1.0 / p)
            best = max(best, float(val))
        rows.append(KappaRow(float(delta), best))
    vals = [r.value for r in rows]
    monotone = all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))
    return {"rows": rows, "monotone": monotone, "smallest": vals[-1]}
