"""Exponential Euler stepping for the state equation and its variational systems.

Between consecutive grid nodes (no jump inside, by construction of the grid)

    u(t_{i+1}-) = S(dt) [u_i + f(u_i) dt + B(u_i) dW_i - lambda int G(u_i, z) m(dz) dt]

and at a jump node ``u(tau) = u(tau-) + G(u(tau-), z)``. The variational
systems use the same template with the linearized coefficients plus the
chain-rule corrections of ``faadibruno``; they are the exact derivatives of the
discrete map with respect to the initial datum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .coefficients import AffineDiffusion, AffineJump, CoefficientSet
from .faadibruno import assemble_correction
from .noise import MarkSpace, NoiseBatch, NoiseRealization, sample_noise
from .spectral import SpectralOperator

BLOWUP_THRESHOLD = 1e12
MAX_SYSTEM_ORDER = 5
DEFAULT_CHUNK = 512


class MissingLowerOrderPath(KeyError):
    def __init__(self, subset):
        super().__init__(f"lower-order sensitivity path {subset} has not been computed")
        self.subset = subset


class UnpairedPaths(ValueError):
    pass


@dataclass
class PathSample:
    """A stack of paths on (possibly padded) jump-adapted grids.

    ``values[r, i]`` is the state of path ``r`` at ``times[r, i]`` (post-jump
    value at jump nodes) and ``left[r, i]`` the left limit; both agree away
    from jumps. ``blowup[r]`` is the first node where path ``r`` left the
    finite range, or -1; values from that node on are NaN.
    """

    times: np.ndarray
    values: np.ndarray
    left: np.ndarray
    jump: np.ndarray
    path_index: np.ndarray
    blowup: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def blown(self) -> np.ndarray:
        return self.blowup >= 0

    def _check_paired(self, other: "PathSample"):
        if self.values.shape != other.values.shape:
            raise UnpairedPaths(f"shape mismatch {self.values.shape} vs {other.values.shape}")
        if not np.array_equal(self.path_index, other.path_index) or not np.array_equal(self.times, other.times):
            raise UnpairedPaths("paths were not produced on the same noise")

    def _combine(self, other, values, left) -> "PathSample":
        b = np.where(self.blowup < 0, other.blowup,
                     np.where(other.blowup < 0, self.blowup, np.minimum(self.blowup, other.blowup)))
        return PathSample(self.times, values, left, self.jump, self.path_index, b)

    def __sub__(self, other: "PathSample") -> "PathSample":
        self._check_paired(other)
        return self._combine(other, self.values - other.values, self.left - other.left)

    def __add__(self, other: "PathSample") -> "PathSample":
        self._check_paired(other)
        return self._combine(other, self.values + other.values, self.left + other.left)

    def scaled(self, c: float) -> "PathSample":
        return PathSample(self.times, c * self.values, c * self.left, self.jump, self.path_index, self.blowup)

    def rows(self, sel) -> "PathSample":
        return PathSample(self.times[sel], self.values[sel], self.left[sel], self.jump[sel],
                          self.path_index[sel], self.blowup[sel])

    @classmethod
    def concat(cls, samples: Sequence["PathSample"]) -> "PathSample":
        if len(samples) == 1:
            return samples[0]
        n1 = max(s.n_nodes for s in samples)
        return cls(
            np.concatenate([_pad_nodes(s.times, n1) for s in samples]),
            np.concatenate([_pad_nodes(s.values, n1) for s in samples]),
            np.concatenate([_pad_nodes(s.left, n1, from_values=s.values) for s in samples]),
            np.concatenate([_pad_nodes(s.jump, n1, fill=False) for s in samples]),
            np.concatenate([s.path_index for s in samples]),
            np.concatenate([s.blowup for s in samples]),
        )


def _pad_nodes(a, n1, fill=None, from_values=None):
    k = a.shape[1]
    if k == n1:
        return a
    if fill is not None:
        pad = np.full((a.shape[0], n1 - k) + a.shape[2:], fill, dtype=a.dtype)
    else:
        src = a if from_values is None else from_values
        pad = np.repeat(src[:, -1:], n1 - k, axis=1)
    return np.concatenate([a, pad], axis=1)


@dataclass
class SensitivitySystem:
    """Base path plus one path per nonempty label subset ``S`` of the directions.

    ``paths[S]`` holds ``u^(|S|)((h_i)_{i in S})`` with 1-based labels.
    """

    base: PathSample
    directions: tuple
    paths: dict = field(default_factory=dict)

    @property
    def order(self) -> int:
        return len(self.directions)

    def path(self, *labels: int) -> PathSample:
        return self.paths[tuple(sorted(labels))]


def as_noise_batch(noise) -> NoiseBatch:
    if isinstance(noise, NoiseBatch):
        return noise
    if isinstance(noise, NoiseRealization):
        return NoiseBatch.stack([noise])
    return NoiseBatch.stack(list(noise))


def _check_dims(op: SpectralOperator, cs: CoefficientSet, batch: NoiseBatch):
    if op.dim != cs.dim:
        raise ValueError(f"operator dimension {op.dim} != coefficient dimension {cs.dim}")
    if batch.d_w != cs.d_w:
        raise ValueError(f"noise Wiener dimension {batch.d_w} != diffusion columns {cs.d_w}")


def _initial(x, M, d) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape == (d,):
        return np.broadcast_to(x, (M, d)).copy()
    if x.shape == (M, d):
        return x.copy()
    raise ValueError(f"initial value must have shape ({d},) or ({M}, {d}), got {x.shape}")


def _has_state_free_B(cs):
    return isinstance(cs.B, AffineDiffusion) and not np.any(cs.B.B1)


def _has_state_free_G(cs):
    return isinstance(cs.G, AffineJump) and not np.any(cs.G.C)


def _march(op, batch: NoiseBatch, x0, increment, jump_term, inherit_blowup=None) -> PathSample:
    """Generic exponential Euler loop.

    ``increment(i, x, dt)`` returns the bracket increment on ``[t_i, t_{i+1}]``;
    ``jump_term(k, x_left, rows)`` returns the jump at node ``k`` for ``rows``.
    """
    times = batch.times
    M, n1 = times.shape
    d = x0.shape[1]
    values = np.empty((M, n1, d))
    left = np.empty((M, n1, d))
    values[:, 0] = left[:, 0] = x0
    blowup = np.full(M, -1, dtype=int) if inherit_blowup is None else inherit_blowup.copy()
    x = x0
    with np.errstate(all="ignore"):
        for i in range(n1 - 1):
            dt = times[:, i + 1] - times[:, i]
            xm = op.decay(dt) * (x + increment(i, x, dt))
            left[:, i + 1] = xm
            rows = np.flatnonzero(batch.jump[:, i + 1])
            if rows.size:
                xm = xm.copy()
                xm[rows] = xm[rows] + jump_term(i + 1, xm[rows], rows)
            bad = ~np.all(np.abs(xm) <= BLOWUP_THRESHOLD, axis=1) & (blowup < 0)
            if bad.any():
                blowup[bad] = i + 1
            dead = (blowup >= 0) & (blowup <= i + 1)
            if dead.any():
                xm = np.where(dead[:, None], np.nan, xm)
                left[dead, i + 1] = np.nan
            values[:, i + 1] = xm
            x = xm
    return PathSample(times, values, left, batch.jump, batch.path_index, blowup)


def solve_mild(op: SpectralOperator, cs: CoefficientSet, u0, noise, marks: MarkSpace | None = None) -> PathSample:
    """Exponential Euler path(s) of the state equation.

    ``marks`` supplies the jump intensity and mark law for the compensator
    drift; it may be omitted when the batch has no jumps and zero intensity is
    intended.
    """
    batch = as_noise_batch(noise)
    _check_dims(op, cs, batch)
    if marks is None and batch.jump.any():
        raise ValueError("a mark space is required to compensate the jumps in this noise")
    lam, nodes, weights = _compensator(marks)
    x0 = _initial(u0, batch.n_paths, cs.dim)
    times, dW = batch.times, batch.dW
    diffusive = cs.d_w > 0

    def increment(i, x, dt):
        t = times[:, i]
        out = cs.f.value(t, x) * dt[:, None]
        if diffusive:
            out = out + np.einsum("mkw,mw->mk", cs.B.value(t, x), dW[:, i])
        if lam > 0:
            comp = sum(w * cs.G.value(t, x, z) for z, w in zip(nodes, weights))
            out = out - lam * comp * dt[:, None]
        return out

    def jump_term(k, xl, rows):
        return cs.G.value(times[rows, k], xl, batch.marks[rows, k])

    return _march(op, batch, x0, increment, jump_term)


def _compensator(marks: MarkSpace | None):
    if marks is None or marks.intensity == 0:
        return 0.0, (), ()
    z, w = marks.quadrature()
    return marks.intensity, tuple(z.tolist()), tuple(w.tolist())


def solve_variational(
    op: SpectralOperator,
    cs: CoefficientSet,
    system: SensitivitySystem,
    subset: Sequence[int],
    noise,
    marks: MarkSpace | None = None,
) -> PathSample:
    """Path of ``u^(|S|)((h_i)_{i in S})`` on the noise that produced ``system.base``.

    Requires every proper nonempty subset of ``subset`` to be present in
    ``system.paths``. Starts at ``h_i`` for a single label and at 0 otherwise.
    """
    batch = as_noise_batch(noise)
    _check_dims(op, cs, batch)
    S = tuple(sorted(subset))
    k = len(S)
    if k < 1:
        raise ValueError("subset must be nonempty")
    if k > cs.n_max:
        from .coefficients import DerivativeOrderError

        raise DerivativeOrderError(k, cs.n_max)
    base = system.base
    if base.n_paths != batch.n_paths or not np.array_equal(base.times, batch.times):
        raise UnpairedPaths("base path was not produced on this noise")
    lower = [T for r in range(1, k) for T in combinations(S, r)]
    for T in lower:
        if T not in system.paths:
            raise MissingLowerOrderPath(T)
    lam, nodes, weights = _compensator(marks)
    M, d = batch.n_paths, cs.dim
    y0 = _initial(system.directions[S[0] - 1], M, d) if k == 1 else np.zeros((M, d))
    times, dW = batch.times, batch.dW
    diffusive = cs.d_w > 0 and not (_has_state_free_B(cs))
    jumpy = not _has_state_free_G(cs)

    def at(i, rows=None, attr="values"):
        sel = slice(None) if rows is None else rows
        return {T: getattr(system.paths[T], attr)[sel, i] for T in lower}

    def increment(i, y, dt):
        t = times[:, i]
        u = base.values[:, i]
        sens = at(i) if k > 1 else None
        drift = cs.f.derivative(1, t, u, [y])
        if k > 1:
            drift = drift + assemble_correction(cs, "f", u, sens, S, t)
        out = drift * dt[:, None]
        if diffusive:
            Bd = cs.B.derivative(1, t, u, [y])
            if k > 1:
                Bd = Bd + assemble_correction(cs, "B", u, sens, S, t)
            out = out + np.einsum("mkw,mw->mk", Bd, dW[:, i])
        if lam > 0 and jumpy:
            comp = 0.0
            for z, w in zip(nodes, weights):
                g = cs.G.derivative(1, t, u, [y], z)
                if k > 1:
                    g = g + assemble_correction(cs, "G", u, sens, S, t, z)
                comp = comp + w * g
            out = out - lam * comp * dt[:, None]
        return out

    def jump_term(kk, yl, rows):
        if not jumpy:
            return np.zeros_like(yl)
        t = times[rows, kk]
        ul = base.left[rows, kk]
        z = batch.marks[rows, kk]
        out = cs.G.derivative(1, t, ul, [yl], z)
        if k > 1:
            out = out + assemble_correction(cs, "G", ul, at(kk, rows, "left"), S, t, z)
        return out

    return _march(op, batch, y0, increment, jump_term, inherit_blowup=base.blowup)


def solve_system(
    op: SpectralOperator,
    cs: CoefficientSet,
    u0,
    directions: Sequence,
    noise,
    marks: MarkSpace | None = None,
    base: PathSample | None = None,
) -> SensitivitySystem:
    """Base path and all subset sensitivity paths for ``directions = (h_1..h_n)``."""
    n = len(directions)
    if n > cs.n_max:
        from .coefficients import DerivativeOrderError

        raise DerivativeOrderError(n, cs.n_max)
    if n > MAX_SYSTEM_ORDER:
        raise ValueError(f"system order {n} exceeds the desk-scale limit {MAX_SYSTEM_ORDER}")
    batch = as_noise_batch(noise)
    if base is None:
        base = solve_mild(op, cs, u0, batch, marks)
    system = SensitivitySystem(base, tuple(np.asarray(h, dtype=float) for h in directions))
    labels = range(1, n + 1)
    for r in range(1, n + 1):
        for S in combinations(labels, r):
            try:
                system.paths[S] = solve_variational(op, cs, system, S, batch, marks)
            except Exception as exc:
                raise type(exc)(f"subset {S}: {exc}") from exc
    return system


def mild_map(
    op: SpectralOperator,
    cs: CoefficientSet,
    u0,
    noise,
    path: PathSample,
    marks: MarkSpace | None = None,
) -> PathSample:
    """Discretized fixed-point map Gamma(u0, path) on the grid of ``noise``.

    Gamma(t_k) = S(t_k) u0 + sum_{i<k} S(t_k - t_i)[f dt + B dW - comp dt](path_i)
    + sum_{jumps <= t_k} S(t_k - tau) G(path(tau-), z). The exponential Euler
    path is a fixed point of this map.
    """
    batch = as_noise_batch(noise)
    _check_dims(op, cs, batch)
    if path.n_paths != batch.n_paths or not np.array_equal(path.times, batch.times):
        raise UnpairedPaths("input path is not on this noise grid")
    lam, nodes, weights = _compensator(marks)
    times, dW = batch.times, batch.dW

    def increment(i, x, dt):
        t = times[:, i]
        v = path.values[:, i]
        out = cs.f.value(t, v) * dt[:, None]
        if cs.d_w:
            out = out + np.einsum("mkw,mw->mk", cs.B.value(t, v), dW[:, i])
        if lam > 0:
            comp = sum(w * cs.G.value(t, v, z) for z, w in zip(nodes, weights))
            out = out - lam * comp * dt[:, None]
        return out

    def jump_term(k, xl, rows):
        return cs.G.value(times[rows, k], path.left[rows, k], batch.marks[rows, k])

    return _march(op, batch, _initial(u0, batch.n_paths, cs.dim), increment, jump_term)


class Ensemble:
    """Monte Carlo ensemble with fixed, path-index-ordered chunks.

    Chunk boundaries depend only on ``chunk_size``; ``threads`` only decides how
    many chunks run at once, so outputs are identical for any thread count.
    """

    def __init__(
        self,
        op: SpectralOperator,
        cs: CoefficientSet,
        marks: MarkSpace,
        T: float,
        dt: float,
        seed: int,
        n_paths: int,
        chunk_size: int = DEFAULT_CHUNK,
        threads: int = 1,
        first_index: int = 0,
        realizations: Sequence[NoiseRealization] | None = None,
    ):
        if n_paths < 1:
            raise ValueError("ensemble needs at least one path")
        if not 0 < dt <= T:
            raise ValueError("need 0 < dt <= T")
        self.op, self.cs, self.marks = op, cs, marks
        self.T, self.dt, self.seed = T, dt, seed
        self.n_paths = n_paths
        self.chunk_size = chunk_size
        self.threads = max(1, int(threads))
        self.first_index = first_index
        self._realizations = realizations

    def _chunk_ranges(self):
        lo = self.first_index
        hi = lo + self.n_paths
        return [(a, min(a + self.chunk_size, hi)) for a in range(lo, hi, self.chunk_size)]

    def _pool_map(self, fn, items):
        if self.threads == 1 or len(items) == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    @cached_property
    def realizations(self) -> list[NoiseRealization]:
        if self._realizations is not None:
            return list(self._realizations)

        def make(rng):
            a, b = rng
            return [sample_noise(self.marks, self.cs.d_w, self.T, self.dt, self.seed, i) for i in range(a, b)]

        return [r for chunk in self._pool_map(make, self._chunk_ranges()) for r in chunk]

    @cached_property
    def batches(self) -> list[NoiseBatch]:
        real = self.realizations
        c = self.chunk_size
        return [NoiseBatch.stack(real[a:a + c]) for a in range(0, len(real), c)]

    def coarsened(self, factor: int) -> "Ensemble":
        real = [r.coarsen(factor) for r in self.realizations]
        return Ensemble(self.op, self.cs, self.marks, self.T, self.dt * factor, self.seed, self.n_paths,
                        self.chunk_size, self.threads, self.first_index, realizations=real)

    def with_coefficients(self, cs: CoefficientSet) -> "Ensemble":
        ens = Ensemble(self.op, cs, self.marks, self.T, self.dt, self.seed, self.n_paths,
                       self.chunk_size, self.threads, self.first_index, realizations=self.realizations)
        return ens

    def map(self, fn: Callable[[NoiseBatch, slice], object]) -> list:
        """Apply ``fn(batch, rows)`` to every chunk; results in path order."""
        c = self.chunk_size
        jobs = [(b, slice(k * c, k * c + b.n_paths)) for k, b in enumerate(self.batches)]
        return self._pool_map(lambda job: fn(*job), jobs)

    def solve(self, u0) -> PathSample:
        u0 = np.asarray(u0, dtype=float)
        return PathSample.concat(self.map(
            lambda b, rows: solve_mild(self.op, self.cs, _rows(u0, rows), b, self.marks)))

    def system(self, u0, directions) -> SensitivitySystem:
        u0 = np.asarray(u0, dtype=float)
        dirs = [np.asarray(h, dtype=float) for h in directions]
        parts = self.map(lambda b, rows: solve_system(
            self.op, self.cs, _rows(u0, rows), [_rows(h, rows) for h in dirs], b, self.marks))
        merged = SensitivitySystem(PathSample.concat([p.base for p in parts]), tuple(dirs))
        for S in parts[0].paths:
            merged.paths[S] = PathSample.concat([p.paths[S] for p in parts])
        return merged


def _rows(x: np.ndarray, rows: slice) -> np.ndarray:
    return x if x.ndim == 1 else x[rows]
