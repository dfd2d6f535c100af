"""INI-style run configuration with strict key checking.

Sections and keys (numbers are decimals with optional exponent; lists are
whitespace or comma separated)::

    [space]        dim, c, eigenvalues
    [noise]        intensity, d_w, marks (finite|interval), mark_values,
                   mark_weights, density_grid, density_values, quad_order
    [coefficients] kind (zero|linear|nemytskii|ou|affine) plus kind-specific keys
    [run]          T, dt, seed, paths, u0, chunk_size
    [norms]        p, q, window
    [verify]       epsilons, directions, direction_seed, order, which, pairs,
                   magnitudes, T0, path_index

Unknown sections or keys are rejected so that misspellings never fall back to
defaults silently.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .coefficients import (
    AffineDiffusion,
    AffineDrift,
    AffineJump,
    CoefficientSet,
    linear_set,
    nemytskii_set,
    random_matrix,
    zero_set,
)
from .noise import MarkSpace
from .spectral import SpectralOperator


class ConfigError(ValueError):
    pass


_COEFF_KEYS = {
    "zero": {"kind"},
    "linear": {"kind", "seed", "scale"},
    "nemytskii": {"kind", "seed", "l_norm", "n_max", "sigma", "jump_scale", "multiplicative"},
    "ou": {"kind", "sigma", "jump"},
    "affine": {"kind", "seed", "f1_norm", "f0_norm"},
}

_SCHEMA = {
    "space": {"dim", "c", "eigenvalues"},
    "noise": {"intensity", "d_w", "marks", "mark_values", "mark_weights", "density_grid", "density_values",
              "quad_order"},
    "coefficients": set().union(*_COEFF_KEYS.values()),
    "run": {"t", "dt", "seed", "paths", "u0", "chunk_size"},
    "norms": {"p", "q", "window"},
    "verify": {"epsilons", "directions", "direction_seed", "order", "which", "pairs", "magnitudes", "t0",
               "path_index"},
}


# configparser lowercases keys; report them as documented
_DISPLAY = {"t": "T", "t0": "T0"}


def parse_list(text: str) -> list[float]:
    parts = text.replace(",", " ").split()
    try:
        return [float(x) for x in parts]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


@dataclass
class RunConfig:
    op: SpectralOperator
    marks: MarkSpace
    cs: CoefficientSet
    T: float
    dt: float
    seed: int | None
    paths: int
    u0: np.ndarray
    chunk_size: int = 512
    p: float = 2.0
    q: float | None = None
    window: tuple | None = None
    epsilons: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    n_directions: int = 8
    direction_seed: int = 0
    order: int = 1
    which: str = "f"
    pairs: int = 50
    magnitudes: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0])
    T0: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    path_index: int = 0
    digest: str = ""


class _Section:
    """Typed access to one section that remembers which keys were consumed."""

    def __init__(self, cp: configparser.ConfigParser, name: str):
        self.name = name
        self.data = dict(cp[name]) if cp.has_section(name) else {}

    def _raw(self, key, required):
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required key '{_DISPLAY.get(key, key)}' in section [{self.name}]")
            return None
        return self.data[key]

    def float(self, key, default=None, required=False):
        raw = self._raw(key, required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: not a number: {raw!r}") from exc

    def int(self, key, default=None, required=False):
        raw = self._raw(key, required)
        if raw is None:
            return default
        try:
            v = float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: not an integer: {raw!r}") from exc
        if v != int(v):
            raise ConfigError(f"[{self.name}] {key}: not an integer: {raw!r}")
        return int(v)

    def list(self, key, default=None, required=False):
        raw = self._raw(key, required)
        return default if raw is None else parse_list(raw)

    def str(self, key, default=None, required=False):
        raw = self._raw(key, required)
        return default if raw is None else raw.strip()

    def bool(self, key, default=False):
        raw = self._raw(key, False)
        if raw is None:
            return default
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key}: not a boolean: {raw!r}")


def _check_unknown(cp: configparser.ConfigParser):
    bad = [f"[{s}]" for s in cp.sections() if s not in _SCHEMA]
    for s in cp.sections():
        if s in _SCHEMA:
            allowed = _SCHEMA[s]
            if s == "coefficients":
                kind = cp[s].get("kind", "").strip()
                allowed = _COEFF_KEYS.get(kind, allowed)
            bad += [f"[{s}] {k}" for k in cp[s] if k not in allowed]
    if bad:
        raise ConfigError("unknown configuration keys: " + ", ".join(bad))


def _build_space(sec: _Section) -> SpectralOperator:
    eig = sec.list("eigenvalues")
    dim = sec.int("dim", required=eig is None)
    if eig is not None:
        if dim is not None and dim != len(eig):
            raise ConfigError(f"[space] dim={dim} but {len(eig)} eigenvalues given")
        try:
            return SpectralOperator(np.array(eig))
        except ValueError as exc:
            raise ConfigError(f"[space] {exc}") from exc
    if dim < 1:
        raise ConfigError("[space] dim must be >= 1")
    return SpectralOperator.quadratic(dim, sec.float("c", 1.0))


def _build_marks(sec: _Section) -> tuple[MarkSpace, int]:
    lam = sec.float("intensity", 0.0)
    d_w = sec.int("d_w", 1)
    kind = sec.str("marks", "finite")
    try:
        if kind == "finite":
            vals = sec.list("mark_values", [1.0, -1.0])
            wts = sec.list("mark_weights", [1.0 / len(vals)] * len(vals))
            if len(vals) != len(wts):
                raise ConfigError("[noise] mark_values and mark_weights differ in length")
            return MarkSpace.finite(lam, list(zip(vals, wts))), d_w
        if kind == "interval":
            grid = sec.list("density_grid", [0.0, 1.0])
            dens = sec.list("density_values", [1.0] * len(grid))
            return MarkSpace(lam, density_grid=np.array(grid), density_values=np.array(dens),
                             quad_order=sec.int("quad_order", 16)), d_w
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[noise] {exc}") from exc
    raise ConfigError(f"[noise] marks must be 'finite' or 'interval', got {kind!r}")


def _build_coefficients(sec: _Section, d: int, d_w: int) -> CoefficientSet:
    kind = sec.str("kind", "zero")
    if kind not in _COEFF_KEYS:
        raise ConfigError(f"[coefficients] unknown kind {kind!r}; expected one of {sorted(_COEFF_KEYS)}")
    if kind == "zero":
        return zero_set(d, d_w)
    if kind == "linear":
        return linear_set(d, d_w, sec.int("seed", 0), sec.float("scale", 0.3))
    if kind == "nemytskii":
        return nemytskii_set(d, d_w, sec.float("l_norm", 0.5), sec.int("n_max", 4), sec.int("seed", 0),
                             sec.float("sigma", 0.3), sec.float("jump_scale", 0.5), sec.bool("multiplicative"))
    if kind == "ou":
        sigma, c = sec.float("sigma", 1.0), sec.float("jump", 0.5)
        return CoefficientSet(AffineDrift(np.zeros(d), np.zeros((d, d))),
                              AffineDiffusion(np.full((d, d_w), sigma / np.sqrt(d_w))),
                              AffineJump(np.full(d, c)))
    seed = sec.int("seed", 0)
    rng = np.random.default_rng(seed)
    F0 = rng.standard_normal(d)
    F0 *= sec.float("f0_norm", 0.1) / np.linalg.norm(F0)
    return CoefficientSet(AffineDrift(F0, random_matrix(d, sec.float("f1_norm", 1.0), seed + 1)),
                          AffineDiffusion(np.zeros((d, d_w))), AffineJump(np.zeros(d)))


def load_config(path: str) -> RunConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_config(raw.decode("utf-8"), hashlib.sha256(raw).hexdigest())


def parse_config(text: str, digest: str = "") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    _check_unknown(cp)
    S = {name: _Section(cp, name) for name in _SCHEMA}

    op = _build_space(S["space"])
    marks, d_w = _build_marks(S["noise"])
    cs = _build_coefficients(S["coefficients"], op.dim, d_w)
    if cs.dim != op.dim:
        raise ConfigError(f"coefficient dimension {cs.dim} does not match space dim {op.dim}")

    run = S["run"]
    T = run.float("t", required=True)
    dt = run.float("dt", required=True)
    if not 0 < dt <= T:
        raise ConfigError(f"[run] need 0 < dt <= T, got dt={dt}, T={T}")
    u0 = run.list("u0", [1.0])
    if len(u0) == 1:
        u0 = u0 * op.dim
    if len(u0) != op.dim:
        raise ConfigError(f"[run] u0 has {len(u0)} entries, expected {op.dim}")
    paths = run.int("paths", 1000)
    if paths < 1:
        raise ConfigError("[run] paths must be >= 1")

    nm = S["norms"]
    p = nm.float("p", 2.0)
    if p <= 0:
        raise ConfigError("[norms] p must be positive")
    window = nm.list("window")
    if window is not None:
        if len(window) != 2 or not 0 <= window[0] <= window[1] <= T:
            raise ConfigError(f"[norms] window must be 't0 t1' inside [0, T], got {window}")
        window = tuple(window)

    vf = S["verify"]
    eps = vf.list("epsilons", [0.1, 0.05, 0.025, 0.0125])
    which = vf.str("which", "f")
    if which not in ("f", "B", "G"):
        raise ConfigError(f"[verify] which must be f, B or G, got {which!r}")
    return RunConfig(
        op=op, marks=marks, cs=cs, T=T, dt=dt, seed=run.int("seed"), paths=paths, u0=np.array(u0),
        chunk_size=run.int("chunk_size", 512), p=p, q=nm.float("q"), window=window, epsilons=eps,
        n_directions=vf.int("directions", 8), direction_seed=vf.int("direction_seed", 0),
        order=vf.int("order", 1), which=which, pairs=vf.int("pairs", 50),
        magnitudes=vf.list("magnitudes", [1e-3, 1e-2, 1e-1, 1.0]), T0=vf.list("t0", [0.2, 0.1, 0.05]),
        path_index=vf.int("path_index", 0), digest=digest,
    )
