"""Per-path driving noise: truncated Wiener increments and Poisson jump events.

Every path owns an independent Philox stream keyed by ``(master_seed,
path_index)``, so a realization is a pure function of those two integers and
never depends on how paths are scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_EXPECTED_EVENTS = 1e7


class IntensityTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class MarkSpace:
    """Mark distribution ``m`` and jump intensity of the compensator ``intensity * dt (x) m(dz)``.

    Finite marks are given as ``marks`` with probability ``weights``. Interval
    marks on [0, 1] are given by a tabulated density (``density_grid``,
    ``density_values``); sampling uses the inverse CDF of the piecewise-linear
    density and compensator integrals use fixed Gauss-Legendre nodes.
    """

    intensity: float
    marks: np.ndarray | None = None
    weights: np.ndarray | None = None
    density_grid: np.ndarray | None = None
    density_values: np.ndarray | None = None
    quad_order: int = 16
    _cdf: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.intensity) or self.intensity < 0:
            raise ValueError("intensity must be finite and nonnegative")
        if self.marks is not None:
            z = np.array(self.marks, dtype=float).reshape(-1)
            w = np.array(self.weights, dtype=float).reshape(-1)
            if z.size == 0 or z.shape != w.shape:
                raise ValueError("marks and weights must be nonempty and of equal length")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("mark weights must be nonnegative and sum to 1")
            object.__setattr__(self, "marks", z)
            object.__setattr__(self, "weights", w)
        elif self.density_grid is not None:
            x = np.array(self.density_grid, dtype=float)
            rho = np.array(self.density_values, dtype=float)
            if x.shape != rho.shape or x.size < 2 or np.any(np.diff(x) <= 0):
                raise ValueError("density table must be increasing with matching values")
            if x[0] != 0.0 or x[-1] != 1.0 or np.any(rho < 0):
                raise ValueError("density must be a nonnegative table on [0, 1]")
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(x))])
            if cdf[-1] <= 0:
                raise ValueError("density integrates to zero")
            object.__setattr__(self, "density_grid", x)
            object.__setattr__(self, "density_values", rho / cdf[-1])
            object.__setattr__(self, "_cdf", cdf / cdf[-1])
        else:
            raise ValueError("either finite marks or a density table is required")

    @classmethod
    def finite(cls, intensity: float, pairs: Sequence[tuple[float, float]]) -> "MarkSpace":
        z, w = zip(*pairs)
        return cls(intensity, marks=np.array(z), weights=np.array(w))

    @property
    def is_finite(self) -> bool:
        return self.marks is not None

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights such that ``sum(w * phi(z))`` approximates ``int phi dm``."""
        if self.is_finite:
            return self.marks, self.weights
        x, w = np.polynomial.legendre.leggauss(self.quad_order)
        z = 0.5 * (x + 1.0)
        rho = np.interp(z, self.density_grid, self.density_values)
        return z, 0.5 * w * rho

    def sample_marks(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.is_finite:
            cum = np.cumsum(self.weights)
            idx = np.searchsorted(cum, rng.random(size) * cum[-1], side="right")
            return self.marks[np.minimum(idx, self.marks.size - 1)]
        u = rng.random(size)
        return self._inverse_cdf(u)

    def _inverse_cdf(self, u: np.ndarray) -> np.ndarray:
        x, rho, cdf = self.density_grid, self.density_values, self._cdf
        k = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, x.size - 2)
        h = x[k + 1] - x[k]
        a = 0.5 * (rho[k + 1] - rho[k]) / h  # CDF on cell k: cdf[k] + rho_k s + a s^2
        b = rho[k]
        c = cdf[k] - u
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
            s_quad = (-2 * c) / (b + disc)
        s_lin = np.where(b > 0, -c / np.where(b > 0, b, 1.0), 0.0)
        s = np.where(np.abs(a) > 1e-14, s_quad, s_lin)
        return np.clip(x[k] + np.nan_to_num(s), 0.0, 1.0)


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for one path: Philox keyed by a hash of the pair."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(path_index)])
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseRealization:
    """One path of driving noise on a jump-adapted grid.

    ``grid`` has ``N + 1`` nodes; ``wiener_increments[i]`` is the increment over
    ``[grid[i], grid[i+1]]``. ``jump_nodes`` are the grid indices of the jump
    times and ``jump_marks`` the corresponding marks. Arrays are read-only.
    """

    grid: np.ndarray
    wiener_increments: np.ndarray
    jump_times: np.ndarray
    jump_marks: np.ndarray
    jump_nodes: np.ndarray
    master_seed: int
    path_index: int
    base_dt: float

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def d_w(self) -> int:
        return self.wiener_increments.shape[1]

    @property
    def jump_events(self) -> list[tuple[float, float]]:
        return list(zip(self.jump_times.tolist(), self.jump_marks.tolist()))

    def coarsen(self, factor: int) -> "NoiseRealization":
        """Same Brownian path and jumps on a base grid ``factor`` times coarser.

        The coarse grid keeps every ``factor``-th node of the uniform base grid
        plus all jump times; increments are summed over the merged fine cells.
        """
        if factor == 1:
            return self
        base = uniform_grid(self.T, self.base_dt)
        if (base.size - 1) % factor:
            raise ValueError(f"base grid of {base.size - 1} steps is not divisible by {factor}")
        keep_base = base[::factor]
        is_jump = np.zeros(self.grid.size, dtype=bool)
        is_jump[self.jump_nodes] = True
        pos = np.clip(np.searchsorted(self.grid, keep_base - 1e-12 * self.T), 0, self.grid.size - 1)
        if np.any(np.abs(self.grid[pos] - keep_base) > 1e-9 * self.T):
            raise ValueError("base grid nodes missing from realization")
        keep = is_jump.copy()
        keep[pos] = True
        keep[0] = keep[-1] = True
        idx = np.flatnonzero(keep)
        dW = np.empty((idx.size - 1, self.d_w))
        for j in range(idx.size - 1):
            dW[j] = self.wiener_increments[idx[j]:idx[j + 1]].sum(axis=0)
        nodes = np.searchsorted(idx, self.jump_nodes)
        return NoiseRealization(
            grid=_readonly(self.grid[idx].copy()),
            wiener_increments=_readonly(dW),
            jump_times=self.jump_times,
            jump_marks=self.jump_marks,
            jump_nodes=_readonly(nodes),
            master_seed=self.master_seed,
            path_index=self.path_index,
            base_dt=self.base_dt * factor,
        )

    def truncate(self, t_end: float) -> "NoiseRealization":
        """Restriction to ``[0, t_end]``; ``t_end`` must be a grid node."""
        k = int(np.searchsorted(self.grid, t_end - 1e-12 * max(1.0, t_end)))
        if k >= self.grid.size or abs(self.grid[k] - t_end) > 1e-9 * max(1.0, t_end):
            raise ValueError(f"t_end={t_end} is not a grid node")
        sel = self.jump_nodes <= k
        return NoiseRealization(
            grid=_readonly(self.grid[: k + 1].copy()),
            wiener_increments=_readonly(self.wiener_increments[:k].copy()),
            jump_times=_readonly(self.jump_times[sel].copy()),
            jump_marks=_readonly(self.jump_marks[sel].copy()),
            jump_nodes=_readonly(self.jump_nodes[sel].copy()),
            master_seed=self.master_seed,
            path_index=self.path_index,
            base_dt=self.base_dt,
        )


def uniform_grid(T: float, base_dt: float) -> np.ndarray:
    n = int(np.ceil(T / base_dt - 1e-9))
    return np.linspace(0.0, T, n + 1)


def sample_noise(
    mark_space: MarkSpace,
    d_w: int,
    T: float,
    base_dt: float,
    master_seed: int,
    path_index: int,
) -> NoiseRealization:
    """Draw one path of noise.

    Jump times come from exponential interarrivals with rate
    ``mark_space.intensity`` (exact simulation), marks are i.i.d. from the mark
    law, and the uniform grid of step ``base_dt`` is merged with the jump times.
    """
    if not T > 0 or not base_dt > 0:
        raise ValueError("T and base_dt must be positive")
    if d_w < 0:
        raise ValueError("d_w must be >= 0")
    lam = mark_space.intensity
    if lam * T > MAX_EXPECTED_EVENTS:
        raise IntensityTooLarge(
            f"intensity too large for desk scale: {lam * T:g} expected events > {MAX_EXPECTED_EVENTS:g}"
        )
    rng = path_rng(master_seed, path_index)

    times = []
    if lam > 0:
        t = 0.0
        while True:
            t += rng.exponential(1.0 / lam)
            if t > T:
                break
            times.append(t)
    jump_times = np.array(times, dtype=float)
    marks = mark_space.sample_marks(rng, jump_times.size) if jump_times.size else np.empty(0)

    base = uniform_grid(T, base_dt)
    grid = np.union1d(base, jump_times)
    jump_nodes = np.searchsorted(grid, jump_times)
    dt = np.diff(grid)
    dW = rng.standard_normal((dt.size, d_w)) * np.sqrt(dt)[:, None]
    return NoiseRealization(
        grid=_readonly(grid),
        wiener_increments=_readonly(dW),
        jump_times=_readonly(jump_times),
        jump_marks=_readonly(np.asarray(marks, dtype=float)),
        jump_nodes=_readonly(jump_nodes),
        master_seed=int(master_seed),
        path_index=int(path_index),
        base_dt=float(base_dt),
    )


def scale_direction_pairing(noise: NoiseRealization) -> NoiseRealization:
    """Hand back the same realization for a run with a perturbed initial datum.

    Paired runs must share noise exactly; the realization is immutable so the
    returned object cannot be resampled or edited in between.
    """
    for a in (noise.grid, noise.wiener_increments, noise.jump_times, noise.jump_marks):
        if a.flags.writeable:
            raise ValueError("noise arrays must be read-only to be paired")
    return noise


@dataclass(frozen=True)
class NoiseBatch:
    """Several realizations stacked on padded arrays for vectorized stepping.

    Shorter grids are padded with zero-length steps at ``T`` (zero increment, no
    jump), which leave every state unchanged.
    """

    times: np.ndarray  # (M, N+1)
    dW: np.ndarray  # (M, N, d_w)
    jump: np.ndarray  # (M, N+1) bool
    marks: np.ndarray  # (M, N+1), 0 where no jump
    path_index: np.ndarray  # (M,)
    lengths: np.ndarray  # (M,) number of real nodes per path

    @property
    def n_paths(self) -> int:
        return self.times.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.shape[1] - 1

    @property
    def d_w(self) -> int:
        return self.dW.shape[2]

    @classmethod
    def stack(cls, paths: Sequence[NoiseRealization]) -> "NoiseBatch":
        if not paths:
            raise ValueError("empty noise batch")
        d_w = paths[0].d_w
        n1 = max(p.grid.size for p in paths)
        M = len(paths)
        times = np.empty((M, n1))
        dW = np.zeros((M, n1 - 1, d_w))
        jump = np.zeros((M, n1), dtype=bool)
        marks = np.zeros((M, n1))
        lengths = np.empty(M, dtype=int)
        for r, p in enumerate(paths):
            if p.d_w != d_w:
                raise ValueError("inconsistent Wiener dimension in batch")
            k = p.grid.size
            lengths[r] = k
            times[r, :k] = p.grid
            times[r, k:] = p.grid[-1]
            dW[r, : k - 1] = p.wiener_increments
            jump[r, p.jump_nodes] = True
            marks[r, p.jump_nodes] = p.jump_marks
        return cls(times, dW, jump, marks, np.array([p.path_index for p in paths]), lengths)


def sample_batch(
    mark_space: MarkSpace,
    d_w: int,
    T: float,
    base_dt: float,
    master_seed: int,
    path_indices: Sequence[int],
) -> list[NoiseRealization]:
    return [sample_noise(mark_space, d_w, T, base_dt, master_seed, i) for i in path_indices]
