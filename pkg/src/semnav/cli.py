"""Command-line entry point: ``semnav <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 config, 4 parse, 5 runtime.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path as FilePath

import numpy as np

from . import __version__
from .harness import (
    METHODS,
    ConfigError,
    ScenarioConfig,
    get_scenario,
    run_trial,
    sweep,
    verify_prop1,
    write_sweep,
)
from .map_model import (
    MapFormatError,
    gap_corridor_map,
    generate_map,
    load_map,
    partition_regions,
    save_map,
    save_mask_csv,
)
from .mc_lbc import allocate, lbc_offline, load_lbc, save_lbc, write_region_csv
from .planner import UnreachableError, dijkstra, write_path_csv
from .sem_channel import ChannelProfile, transmit_map
from .trav_graph import build_graph

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PARSE = 4
EXIT_RUNTIME = 5


class UsageError(Exception):
    pass


def _cell(text: str) -> tuple[int, int]:
    try:
        r, c = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROW,COL, got {text!r}") from None
    return r, c


def _regions(text: str) -> tuple[int, int]:
    try:
        r, c = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None
    return r, c


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _vertex(graph, cell, what):
    try:
        return graph.vertex(cell)
    except KeyError:
        raise UsageError(f"{what} cell {cell} is not traversable") from None


def cmd_gen_map(args) -> int:
    rows, cols = args.regions
    if args.kind == "gap":
        grid, src, dst = gap_corridor_map(args.seed, args.size, gap_width=args.gap_width)
        print(f"source {src[0]},{src[1]}")
        print(f"target {dst[0]},{dst[1]}")
    else:
        grid = generate_map(args.seed, args.width, args.height, args.density, args.passes)
    grid = partition_regions(grid, rows, cols)
    save_map(grid, args.out)
    if args.mask_csv:
        save_mask_csv(grid, args.mask_csv)
    print(f"wrote {args.out} ({grid.height}x{grid.width}, {int(grid.nontraversable_mask.sum())} blocked)")
    return EXIT_OK


def cmd_plan(args) -> int:
    grid = load_map(args.map)
    graph = build_graph(grid, args.kappa)
    s = _vertex(graph, args.source, "source")
    t = _vertex(graph, args.target, "target")
    path = dijkstra(graph, s, t)
    if args.out:
        write_path_csv(graph, path, args.out)
    print(f"weight {path.total_weight!r} vertices {len(path)}")
    return EXIT_OK


def cmd_transmit(args) -> int:
    grid = load_map(args.map)
    delta = np.asarray(args.delta, dtype=np.float64)
    if delta.size not in (1, grid.n_regions):
        raise UsageError(f"--delta needs 1 or {grid.n_regions} values, got {delta.size}")
    profile = ChannelProfile(kind=args.channel, sigma0_sq=args.sigma0_sq, beta=args.beta)
    received = transmit_map(grid, delta, args.snr, profile, args.seed)
    save_map(received, args.out)
    flipped = int((received.nontraversable_mask != grid.nontraversable_mask).sum())
    print(f"wrote {args.out} ({flipped} cells changed traversability)")
    return EXIT_OK


def _scenario(args):
    cfg = ScenarioConfig.load(args.config)
    return cfg, get_scenario(cfg)


def cmd_lbc_offline(args) -> int:
    cfg, sc = _scenario(args)
    snr = cfg.snr_db[0] if args.snr is None else args.snr
    inc = lbc_offline(sc.graph, sc.source, sc.target, cfg.alloc, sc.planning_field(snr))
    save_lbc(inc, args.out, h=cfg.alloc.h)
    print(f"wrote {args.out} (psi_h {inc.psi_h}, {inc.n_success} walks, {inc.n_attempts} attempts)")
    return EXIT_OK


def cmd_allocate(args) -> int:
    cfg, sc = _scenario(args)
    snr = cfg.snr_db[0] if args.snr is None else args.snr
    fld = sc.planning_field(snr)
    if args.offline:
        try:
            off, h = load_lbc(args.offline)
        except ValueError as exc:
            raise MapFormatError(str(exc)) from None
        if off.counts.shape != sc.grid.shape:
            raise UsageError("offline counts do not match the scenario map")
        if h != cfg.alloc.h:
            print(f"warning: offline counts used h={h!r}, config has h={cfg.alloc.h!r}", file=sys.stderr)
    else:
        off = lbc_offline(sc.graph, sc.source, sc.target, cfg.alloc, fld)
    alloc = allocate(sc.graph, sc.graph, sc.grid, sc.source, sc.target, cfg.alloc, fld, off)
    if args.out:
        write_region_csv(alloc.state, args.out)
    for k, d in enumerate(alloc.delta.tolist()):
        print(f"region {k} delta {d!r}")
    return EXIT_OK


def cmd_trial(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    snr = cfg.snr_db[0] if args.snr is None else args.snr
    rec = run_trial(cfg, args.method, snr, args.seed)
    print(json.dumps(rec.__dict__, sort_keys=True))
    return EXIT_RUNTIME if rec.failed else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    result = sweep(cfg, workers=args.workers)
    paths = write_sweep(result, cfg, args.out_dir)
    for a in result.aggregates:
        print(
            f"{a.method:8s} snr {a.snr_db:6.1f}  weight_error {a.weight_error_mean:10.4f}"
            f" +- {a.weight_error_stderr:.4f}  nontraversable {a.nontraversable_mean:.3f}"
            f"  failed {a.n_failed}"
        )
    print(f"wrote {paths['trials']}, {paths['aggregate']}, {paths['manifest']}")
    return EXIT_OK


def cmd_verify_prop1(args) -> int:
    rep = verify_prop1(args.pairs, args.seed)
    print(f"pairs {rep.n_pairs} feasible {rep.n_feasible} infeasible {rep.n_infeasible}")
    print(f"max rel deviation, raw forward difference:        {rep.max_rel_dev_raw:.6g}")
    print(f"max rel deviation, variance-normalized difference: {rep.max_rel_dev_normalized:.6g}")
    print(f"max rel deviation, raw vs delta_w^2/3 - var_star:  {rep.max_rel_dev_raw_vs_third:.6g}")
    print(f"xi max analytic {rep.xi_max_analytic!r} scan {rep.xi_max_scan!r} at |z| {rep.z_at_max!r}")
    if args.out:
        out = FilePath(args.out)
        cols = ["delta_w", "var_star", "feasible", "closed_form", "argmax_raw", "argmax_normalized"]
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, cols, lineterminator="\n")
            w.writeheader()
            for row in rep.rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semnav", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"semnav {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-map", help="generate a seeded traversability map")
    g.add_argument("--kind", choices=["terrain", "gap"], default="terrain")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--size", type=int, default=64, help="side length for --kind gap")
    g.add_argument("--gap-width", type=int, default=3)
    g.add_argument("--density", type=float, default=0.2)
    g.add_argument("--passes", type=int, default=2)
    g.add_argument("--regions", type=_regions, default=(4, 4), help="ROWSxCOLS")
    g.add_argument("--mask-csv")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_map)

    g = sub.add_parser("plan", help="shortest path on a map file")
    g.add_argument("--map", required=True)
    g.add_argument("--source", type=_cell, required=True)
    g.add_argument("--target", type=_cell, required=True)
    g.add_argument("--kappa", type=float, default=1.0)
    g.add_argument("--out", help="path CSV")
    g.set_defaults(func=cmd_plan)

    g = sub.add_parser("transmit", help="pass a map through the noisy channel")
    g.add_argument("--map", required=True)
    g.add_argument("--snr", type=float, required=True)
    g.add_argument("--delta", type=_floats, default=[1.0], help="one value or one per region")
    g.add_argument("--channel", choices=["awgn", "rayleigh"], default="awgn")
    g.add_argument("--sigma0-sq", type=float, default=ChannelProfile.sigma0_sq)
    g.add_argument("--beta", type=float, default=ChannelProfile.beta)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_transmit)

    for name, func, helptext in (
        ("lbc-offline", cmd_lbc_offline, "full-map offline counts for a scenario"),
        ("allocate", cmd_allocate, "per-region ratios for a scenario"),
    ):
        g = sub.add_parser(name, help=helptext)
        g.add_argument("--config", required=True)
        g.add_argument("--snr", type=float, help="defaults to the first SNR in the config")
        if name == "allocate":
            g.add_argument("--offline", help="counts file from lbc-offline")
            g.add_argument("--out", help="region CSV")
        else:
            g.add_argument("--out", required=True)
        g.set_defaults(func=func)

    g = sub.add_parser("trial", help="one paired trial, printed as JSON")
    g.add_argument("--config", required=True)
    g.add_argument("--method", choices=METHODS, default="lbc")
    g.add_argument("--snr", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_trial)

    g = sub.add_parser("sweep", help="every method x SNR x trial, written as CSV")
    g.add_argument("--config", required=True)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--workers", type=int, help="overrides SEMNAV_WORKERS")
    g.set_defaults(func=cmd_sweep)

    g = sub.add_parser("verify-prop1", help="finite-difference check of the optimal-variance rule")
    g.add_argument("--pairs", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="per-pair CSV")
    g.set_defaults(func=cmd_verify_prop1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"semnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"semnav: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MapFormatError, json.JSONDecodeError) as exc:
        print(f"semnav: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"semnav: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (UnreachableError, ValueError, RuntimeError, OSError) as exc:
        print(f"semnav: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
