"""Diagonal model of the operator A and its contraction semigroup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpectralOperator:
    """Nonnegative self-adjoint operator, diagonal in a fixed orthonormal basis.

    ``eigenvalues[k]`` is the eigenvalue attached to basis vector ``k``; the
    state space is the span of the first ``d`` eigenvectors.
    """

    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if lam.size < 1:
            raise ValueError("spectrum must have at least one eigenvalue")
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        if np.any(lam < 0):
            raise ValueError("eigenvalues must be nonnegative (A maximal monotone)")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @classmethod
    def quadratic(cls, d: int, c: float = 1.0) -> "SpectralOperator":
        """Heat-like spectrum ``c * k**2`` for ``k = 1..d``."""
        if d < 1:
            raise ValueError("d must be >= 1")
        if c < 0:
            raise ValueError("c must be >= 0")
        k = np.arange(1, d + 1, dtype=float)
        return cls(c * k**2)

    def decay(self, tau) -> np.ndarray:
        """Diagonal of S(tau); ``tau`` may be an array of durations (one per row)."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0):
            raise ValueError("semigroup time must be nonnegative")
        return np.exp(-self.eigenvalues * tau[..., None])


def semigroup_apply(op: SpectralOperator, tau, x) -> np.ndarray:
    """Return ``S(tau) x = exp(-tau A) x``.

    ``x`` has shape ``(..., d)``; ``tau`` is a scalar or broadcasts against the
    leading axes of ``x``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != op.dim:
        raise ValueError(f"state dimension {x.shape[-1]} != operator dimension {op.dim}")
    return op.decay(tau) * x


def hilbert_norm(x) -> np.ndarray:
    """Euclidean norm over the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.sum(x * x, axis=-1))
