"""Command line entry point: ``jumpspde <subcommand> [options]``.

Every run writes a CSV and a ``<csv>.manifest.json`` next to it. Exit codes:
0 success or PASS, 1 FAIL, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_list
from .faadibruno import grouped_table
from .norms import gp_norm, lpq_nu_norm, sp_norm
from .solver import Ensemble
from .verify import (
    Problem,
    chainrule_test,
    contraction_diagnostic,
    exponent_plan_check,
    frechet_test,
    gateaux_test,
    higher_order_test,
    lipschitz_test,
    unit_directions,
)

SEED_ENV = "JUMPSPDE_SEED"
CSV_FORMAT = 1
VERIFY_KINDS = ("gateaux", "frechet", "higher", "lipschitz", "contraction", "chainrule", "plan")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "" if x is None else str(x)


def write_outputs(out: Path, columns: list[str], rows: list, meta: dict) -> None:
    """CSV with fixed columns plus a manifest; both byte-stable for fixed inputs."""
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r.get(c) for c in columns] if isinstance(r, dict) else r
            w.writerow([_fmt(v) for v in vals])
    manifest = {"version": __version__, "csv_format": CSV_FORMAT, "columns": columns, **meta}
    with open(str(out) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_seed(args, cfg: RunConfig | None) -> int:
    if args.seed is not None:
        return args.seed
    if cfg is not None and cfg.seed is not None:
        return cfg.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this subcommand")
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if getattr(args, "paths", None) is not None:
        cfg.paths = args.paths
    if getattr(args, "epsilons", None):
        cfg.epsilons = parse_list(args.epsilons)
    if getattr(args, "order", None) is not None:
        cfg.order = args.order
    return cfg


def _ensemble(cfg: RunConfig, seed: int, threads: int) -> Ensemble:
    return Ensemble(cfg.op, cfg.cs, cfg.marks, cfg.T, cfg.dt, seed, cfg.paths,
                    chunk_size=cfg.chunk_size, threads=threads)


def _meta(args, cfg: RunConfig | None, seed: int | None, **extra) -> dict:
    meta = {"command": args.command, "seed": seed,
            "config_sha256": None if cfg is None else cfg.digest}
    if cfg is not None:
        meta["paths"] = cfg.paths
    meta.update(extra)
    return meta


def _path_rows(P, label=None, full=False):
    rows = []
    d = P.values.shape[-1]
    for m in range(P.n_paths):
        idx = range(P.n_nodes) if full else [P.n_nodes - 1]
        for i in idx:
            row = [int(P.path_index[m])] + ([label] if label is not None else []) + [
                float(P.times[m, i]), bool(P.blowup[m] >= 0)] + [float(v) for v in P.values[m, i]]
            rows.append(row)
    return rows, d


def cmd_simulate(args) -> int:
    cfg = _load(args)
    seed = _resolve_seed(args, cfg)
    P = _ensemble(cfg, seed, args.threads).solve(cfg.u0)
    rows, d = _path_rows(P, full=args.full)
    cols = ["path_index", "t", "blowup"] + [f"u{k}" for k in range(d)]
    write_outputs(Path(args.out), cols, rows, _meta(args, cfg, seed, full=args.full))
    return 0


def _random_directions(d: int, count: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = rng.standard_normal(d)
        out.append(v / np.linalg.norm(v))
    return out


def cmd_derivative(args) -> int:
    cfg = _load(args)
    seed = _resolve_seed(args, cfg)
    dirs = _random_directions(cfg.op.dim, cfg.order, cfg.direction_seed)
    sys_ = _ensemble(cfg, seed, args.threads).system(cfg.u0, dirs)
    rows, d = _path_rows(sys_.base, "base")
    for S in sorted(sys_.paths, key=lambda s: (len(s), s)):
        r, _ = _path_rows(sys_.paths[S], "".join(str(i) for i in S))
        rows += r
    rows.sort(key=lambda r: r[0])  # path-major, subsets in fixed order within a path
    cols = ["path_index", "subset", "t", "blowup"] + [f"v{k}" for k in range(d)]
    write_outputs(Path(args.out), cols, rows, _meta(args, cfg, seed, order=cfg.order))
    return 0


def cmd_partitions(args) -> int:
    if not 1 <= args.n <= 8:
        raise ConfigError("--n must lie in 1..8")
    rows = []
    for k, row in enumerate(grouped_table(args.n)):
        part = row["partition"]
        rows.append({
            "index": k,
            "partition": "|".join("{" + ",".join(map(str, b)) + "}" for b in part),
            "n_blocks": len(part),
            "block_sizes": " ".join(str(s) for s in row["block_sizes"]),
            "multiplicity": row["multiplicity"],
        })
    write_outputs(Path(args.out), ["index", "partition", "n_blocks", "block_sizes", "multiplicity"], rows,
                  _meta(args, None, None, n=args.n))
    return 0


def cmd_norms(args) -> int:
    cfg = _load(args)
    seed = _resolve_seed(args, cfg)
    ens = _ensemble(cfg, seed, args.threads)
    P = ens.solve(cfg.u0)
    rows = [sp_norm(P, cfg.p, cfg.window).row("S^p(u)", cfg.window)]
    # G(u(t_i-), z_k) on every cell and mark node
    z, _ = cfg.marks.quadrature()
    M, N1 = P.times.shape
    x = P.values[:, :-1].reshape(M * (N1 - 1), -1)
    t = P.times[:, :-1].reshape(-1)
    g = np.stack([cfg.cs.G.value(t, x, float(zk)).reshape(M, N1 - 1, -1) for zk in z], axis=2)
    dt = np.diff(P.times, axis=1)
    times = P.times[:, :-1]
    rows.append(lpq_nu_norm(g, dt, cfg.marks, cfg.p, 2.0, times, cfg.window).row("Lp(L2)(G)", cfg.window))
    split = (0.5 * g, 0.5 * g) if 1 < cfg.p < 2 else None
    gp = gp_norm(g, dt, cfg.marks, cfg.p, split, times, cfg.window)
    rows.append(gp.row("G^p(G)" + (" upper bound" if gp.label else ""), cfg.window))
    write_outputs(Path(args.out), ["name", "p", "window", "estimate", "se", "M"], rows, _meta(args, cfg, seed))
    return 0


def _verdict(args, kind: str, passed: bool, reason: str) -> int:
    print(f"verify {kind}: {'PASS' if passed else 'FAIL'} ({reason})")
    return 0 if passed else 1


def cmd_verify(args) -> int:
    kind = args.kind
    if kind == "plan":
        return _verify_plan(args)
    cfg = _load(args)
    seed = _resolve_seed(args, cfg)
    d = cfg.op.dim
    problem = Problem(_ensemble(cfg, seed, args.threads), cfg.u0, cfg.p, cfg.window)
    if kind == "gateaux":
        t = gateaux_test(problem, _random_directions(d, 1, cfg.direction_seed)[0], cfg.epsilons)
        cols, rows = ["eps", "remainder", "se", "ratio", "M", "blowup_fraction"], t.rows()
    elif kind == "frechet":
        dirs = unit_directions(d, cfg.n_directions, cfg.direction_seed)
        t = frechet_test(problem, dirs, cfg.epsilons, q=cfg.q)
        cols, rows = ["eps", "max_remainder", "argmax_direction", "ratio"], t.rows()
    elif kind == "higher":
        dirs = _random_directions(d, cfg.order, cfg.direction_seed)
        t = higher_order_test(problem, dirs, cfg.epsilons, q=cfg.q)
        cols, rows = ["eps", "remainder", "se", "ratio", "M", "blowup_fraction"], t.rows()
    elif kind == "chainrule":
        dirs = _random_directions(d, cfg.order + 1, cfg.direction_seed)
        t = chainrule_test(problem, dirs, cfg.epsilons, which=cfg.which)
        cols, rows = ["eps", "remainder", "se", "ratio", "M", "blowup_fraction"], t.rows()
    elif kind == "lipschitz":
        t = lipschitz_test(problem, cfg.pairs, cfg.magnitudes, seed=cfg.direction_seed)
        cols, rows = ["pair", "delta", "distance", "quotient"], t.rows()
    else:
        t = contraction_diagnostic(problem, cfg.T0, cfg.path_index)
        cols, rows = ["T0", "factor", "first", "second"], t.rows()
    write_outputs(Path(args.out), cols, rows,
                  _meta(args, cfg, seed, kind=kind, verdict="PASS" if t.passed else "FAIL", reason=t.reason))
    return _verdict(args, kind, t.passed, t.reason)


def _verify_plan(args) -> int:
    cfg = _load(args) if args.config else None
    n = args.order if args.order is not None else (cfg.order if cfg else 1)
    m = args.m if args.m is not None else (cfg.cs.m if cfg else 0)
    p = args.p if args.p is not None else (cfg.p if cfg else None)
    q = args.q if args.q is not None else (cfg.q if cfg else None)
    if p is None or q is None:
        raise ConfigError("plan check needs p and q (flags --p/--q or [norms] in the config)")
    rep = exponent_plan_check(n, m, p, q, args.p0)
    write_outputs(Path(args.out), ["check", "inequality", "holds", "slack"], rep.rows(),
                  _meta(args, cfg, None, kind="plan", n=n, m=str(m), p=str(p), q=str(q),
                        verdict="PASS" if rep.passed else "FAIL", binding=rep.binding.name))
    return _verdict(args, "plan", rep.passed, f"binding: {rep.binding.inequality}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jumpspde", description="Jump-diffusion evolution equations: "
                                 "simulation, pathwise sensitivities and verification checks")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, default=None, help=f"master seed (default: config, then ${SEED_ENV}, then 0)")
        p.add_argument("--paths", type=int, default=None, help="number of Monte Carlo paths")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--out", default=out, help="output CSV path")

    p = sub.add_parser("simulate", help="solve the state equation")
    common(p, "simulate.csv")
    p.add_argument("--full", action="store_true", help="write every grid node, not only t = T")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("derivative", help="solve the sensitivity system")
    common(p, "derivative.csv")
    p.add_argument("--order", type=int, default=None)
    p.set_defaults(func=cmd_derivative)

    p = sub.add_parser("verify", help="run a verification check")
    p.add_argument("kind", choices=VERIFY_KINDS)
    common(p, "report.csv")
    p.add_argument("--epsilons", default=None, help="comma separated, strictly decreasing")
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--m", type=float, default=None, help="growth degree (plan)")
    p.add_argument("--p", type=float, default=None, help="integrability exponent (plan)")
    p.add_argument("--q", type=float, default=None, help="exponent of the directions (plan)")
    p.add_argument("--p0", type=float, default=None, help="exponent of the base path (plan)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("partitions", help="list set partitions of {1..n}")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default="partitions.csv")
    p.set_defaults(func=cmd_partitions)

    p = sub.add_parser("norms", help="estimate S^p and jump-field norms of the solution")
    common(p, "norms.csv")
    p.set_defaults(func=cmd_norms)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid eps ladders, exponent plans, direction sets
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
