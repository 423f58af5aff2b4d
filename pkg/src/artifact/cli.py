"""Command-line entry point.

Every subcommand prints a ``# config`` line with the resolved settings
(seed included), then a human-readable report; ``--report PATH`` also
writes the report as JSON and ``--plot-data DIR`` writes CSV series.
Exit status: 0 on success, 1 when reconstruction leaves no compatible
candidate (or ``evaluate`` finds a nonzero distance), 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from .arch import ArchGraph
from .blocks import Block, mine_report
from .defenses import DefenseConfig, DefenseKind, default_decoy, evaluate_defense
from .estimate import DEFAULT_BEAM, DEFAULT_TOLERANCE, IOSpec, TimingLUT, build_lut
from .generate import DEFAULT_CAP, CandidateExplosionError, EmptyTraceError, count_candidates, write_candidates
from .metrics import evaluate
from .pipeline import reconstruct
from .sim import CostModel, NoiseModel, load_config, simulate
from .space import MALCONV_GRID, SPACES, get_space
from .trace import DEFAULT_THRESHOLD, condense, parse_raw, read_processed, write_processed, write_raw

SEED_ENV = "ARTIFACT_SEED"
JOBS_ENV = "ARTIFACT_JOBS"

EXIT_OK, EXIT_NO_SURVIVORS, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _env_int(name: str) -> int | None:
    value = os.environ.get(name)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {value!r}") from None


def _shape(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use e.g. 3,32,32") from None


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _fixture(name: str):
    from .fixtures import UnknownFixtureError, load_fixture
    try:
        return load_fixture(name)
    except UnknownFixtureError as exc:
        raise UsageError(str(exc.args[0])) from None


def _models(args) -> tuple[CostModel, NoiseModel]:
    if getattr(args, "config", None):
        cost, noise = load_config(_existing(args.config, "config file"))
    else:
        cost, noise = CostModel(), NoiseModel()
    if getattr(args, "noiseless", False):
        noise = NoiseModel.noiseless()
    return cost, noise.with_seed(args.seed)


def _graph_arg(args) -> ArchGraph:
    if args.arch:
        return ArchGraph.load(_existing(args.arch, "architecture file"))
    if args.fixture:
        return _fixture(args.fixture).arch
    raise UsageError("give --arch or --fixture")


def _trace_arg(args):
    """Processed trace plus defaults (space, io) taken from a fixture when one is named."""
    fx = _fixture(args.fixture) if args.fixture else None
    if args.trace:
        trace = read_processed(_existing(args.trace, "trace file"))
    elif fx is not None:
        trace = fx.processed
    else:
        raise UsageError("give a processed trace file or --fixture")
    return trace, fx


def _emit(args, config: dict, text: str, report: dict) -> None:
    print("# config " + json.dumps(config, sort_keys=True))
    print(text)
    if getattr(args, "report", None):
        Path(args.report).write_text(json.dumps({"config": config, **report}, indent=1, sort_keys=True) + "\n")


def _plot_data(args, name: str, header: list[str], rows) -> None:
    """Write a CSV a generic plotter can render, when --plot-data was given."""
    if not getattr(args, "plot_data", None):
        return
    out = Path(args.plot_data)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ----------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    g = _graph_arg(args)
    cost, noise = _models(args)
    style = args.style or (_fixture(args.fixture).style if args.fixture else "pytorch")
    events = simulate(g, cost, noise, style)
    if args.output:
        write_raw(events, args.output)
    else:
        sys.stdout.write("".join(f"{e.timestamp},{e.symbol}\n" for e in events))
    config = {"subcommand": "simulate", "seed": args.seed, "style": style, "noise": noise.to_dict()}
    if args.output:
        _emit(args, config, f"{len(events)} raw events written to {args.output}", {"events": len(events)})
    return EXIT_OK


def cmd_denoise(args) -> int:
    events = parse_raw(_existing(args.raw, "raw trace"))
    t = condense(events, args.threshold)
    write_processed(t, args.output)
    _emit(args, {"subcommand": "denoise", "seed": args.seed, "threshold": args.threshold},
          f"{len(events)} raw events -> {len(t)} entries written to {args.output}",
          {"events": len(events), "entries": len(t)})
    return EXIT_OK


def cmd_profile(args) -> int:
    cost, _ = _models(args)
    lut = build_lut(MALCONV_GRID, cost)
    lut.save(args.output)
    bins: dict[int, int] = {}
    for t in lut.entries.values():
        b = math.floor(4 * math.log10(t.span))  # quarter-decade bins
        bins[b] = bins.get(b, 0) + 1
    _plot_data(args, "timing_histogram.csv", ["log10_span_low", "log10_span_high", "profiles"],
               [(b / 4, (b + 1) / 4, n) for b, n in sorted(bins.items())])
    _emit(args, {"subcommand": "profile", "seed": args.seed, "grid": args.grid, "cost": cost.digest()},
          f"{len(lut)} profiles written to {args.output}", {"profiles": len(lut)})
    return EXIT_OK


def cmd_mine_blocks(args) -> int:
    trace, fx = _trace_arg(args)
    space = get_space(args.space or (fx.space_name if fx else "mnasnet"))
    rep = mine_report(trace, space)
    if args.output:
        Path(args.output).write_text(json.dumps([b.to_dict() for b in rep.blocks], indent=1) + "\n")
    _emit(args, {"subcommand": "mine-blocks", "seed": args.seed, "space": space.name}, rep.table(),
          {"blocks": [b.to_dict() for b in rep.blocks], "counts": rep.counts})
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    trace, fx = _trace_arg(args)
    space = get_space(args.space or (fx.space_name if fx else "toynet"))
    if args.input_shape is not None and args.output_shape is not None:
        io = IOSpec(args.input_shape, args.output_shape)
    elif fx is not None:
        io = fx.io
    else:
        raise UsageError("give --input-shape and --output-shape, or --fixture")
    blocks = None
    if args.blocks:
        blocks = [Block.from_dict(d) for d in json.loads(_existing(args.blocks, "blocks file").read_text())]
    level = args.level or ("block" if blocks is not None or space.name == "mnasnet" else "op")
    lut = TimingLUT.load(_existing(args.lut, "lookup table")) if args.lut else None
    truth = ArchGraph.load(_existing(args.truth, "truth architecture")) if args.truth else (fx.arch if fx else None)
    try:
        res = reconstruct(trace, space, io, level=level, blocks=blocks, lut=lut, tolerance=args.tolerance,
                          cap=args.cap, beam=args.beam, jobs=args.jobs)
    except CandidateExplosionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_SURVIVORS
    report = res.to_dict()
    labels = trace.labels
    _plot_data(args, "candidate_counts.csv", ["entries", "raw_candidates"],
               [(n, count_candidates(labels[:n])) for n in range(1, len(labels) + 1)])
    lines = [res.summary()]
    if truth is not None and res.survivors:
        err = res.score(truth)
        report["error"] = err.to_dict()
        lines.append(f"best survivor: ged {err.ged}, l1 {err.l1}")
    if args.out:
        out = Path(args.out)
        write_candidates(res.candidates, out / "candidates")
        for i, g in enumerate(res.survivors):
            g.save(out / f"survivor_{i}.json")
        lines.append(f"candidates and survivors written to {out}")
    config = {"subcommand": "reconstruct", "seed": args.seed, "jobs": args.jobs, "space": space.name,
              "level": level, "tolerance": args.tolerance, "cap": args.cap, "beam": args.beam}
    _emit(args, config, "\n".join(lines), report)
    return EXIT_OK if res.survivors else EXIT_NO_SURVIVORS


def cmd_defend(args) -> int:
    g = _graph_arg(args)
    fx = _fixture(args.fixture) if args.fixture else None
    space = get_space(args.space or (fx.space_name if fx else "toynet"))
    style = fx.style if fx else "pytorch"
    cost, noise = _models(args)
    kind = DefenseKind(args.kind)
    decoy = None
    if kind is DefenseKind.DECOY_PARALLEL:
        decoy = ArchGraph.load(_existing(args.decoy, "decoy architecture")) if args.decoy else default_decoy()
    try:
        d = DefenseConfig(kind, args.strength, decoy=decoy, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rep = evaluate_defense(g, d, space, cost, noise, args.queries, style, args.tolerance)
    _plot_data(args, "defense_queries.csv", ["query", "entries", "candidates", "survivors", "ged", "l1"],
               [(i, q["entries"], q["candidates"], q["survivors"], q["ged"], q["l1"])
                for i, q in enumerate(rep.per_query)])
    _emit(args, {"subcommand": "defend", "seed": args.seed, "kind": kind.value, "strength": args.strength,
                 "queries": args.queries, "space": space.name}, rep.table(), rep.to_dict())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    recon = ArchGraph.load(_existing(args.reconstructed, "reconstructed architecture"))
    truth = ArchGraph.load(_existing(args.truth, "truth architecture"))
    err = evaluate(recon, truth)
    _emit(args, {"subcommand": "evaluate", "seed": args.seed}, f"ged {err.ged}\nl1 {err.l1}", err.to_dict())
    return EXIT_OK if (err.ged, err.l1) == (0, 0) else EXIT_NO_SURVIVORS


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (env {SEED_ENV}, default 0)")
    common.add_argument("--jobs", type=int, default=None,
                        help=f"worker processes, 0 = all cores (env {JOBS_ENV}, default all cores)")
    common.add_argument("--report", metavar="PATH", help="also write the report as JSON")
    common.add_argument("--plot-data", metavar="DIR", help="write CSV series for plotting into DIR")

    ap = argparse.ArgumentParser(prog="artifact", description="Reconstruct network architectures from cache traces.")
    sub = ap.add_subparsers(dest="command", required=True)

    def source(p, trace: bool = False):
        p.add_argument("--fixture", help="built-in victim: toynet, malconv, proxylessnas-cpu")
        if trace:
            p.add_argument("trace", nargs="?", help="processed trace file")
        else:
            p.add_argument("--arch", help="architecture JSON")

    p = sub.add_parser("simulate", parents=[common], help="raw probe trace of one inference")
    source(p)
    p.add_argument("--config", help="cost/noise model JSON")
    p.add_argument("--style", choices=["pytorch", "distinct"])
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("-o", "--output", help="raw trace file (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("denoise", parents=[common], help="condense a raw trace")
    p.add_argument("raw")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("profile", parents=[common], help="build a timing lookup table")
    p.add_argument("--grid", choices=["malconv"], default="malconv")
    p.add_argument("--config", help="cost model JSON")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("mine-blocks", parents=[common], help="find repeated blocks in a trace")
    source(p, trace=True)
    p.add_argument("--space", choices=sorted(SPACES))
    p.add_argument("-o", "--output", help="blocks JSON")
    p.set_defaults(func=cmd_mine_blocks)

    p = sub.add_parser("reconstruct", parents=[common], help="generate and eliminate candidates")
    source(p, trace=True)
    p.add_argument("--space", choices=sorted(SPACES))
    p.add_argument("--level", choices=["op", "block"])
    p.add_argument("--blocks", help="blocks JSON from mine-blocks")
    p.add_argument("--lut", help="lookup table from profile")
    p.add_argument("--input-shape", type=_shape)
    p.add_argument("--output-shape", type=_shape)
    p.add_argument("--truth", help="ground-truth architecture to score against")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    p.add_argument("--out", help="directory for candidates and survivors")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("defend", parents=[common], help="attack a defended victim")
    source(p)
    p.add_argument("--kind", choices=[k.value for k in DefenseKind], required=True)
    p.add_argument("--strength", type=float, default=0.0)
    p.add_argument("--queries", type=int, default=1)
    p.add_argument("--decoy", help="decoy architecture JSON")
    p.add_argument("--space", choices=sorted(SPACES))
    p.add_argument("--config", help="cost/noise model JSON")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("evaluate", parents=[common], help="GED and parameter distance between two graphs")
    p.add_argument("reconstructed")
    p.add_argument("truth")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.seed is None:
            args.seed = _env_int(SEED_ENV) or 0
        if args.jobs is None:
            env_jobs = _env_int(JOBS_ENV)
            args.jobs = 0 if env_jobs is None else env_jobs
        if args.jobs < 0:
            raise UsageError("--jobs must be >= 0")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        ap._subparsers._group_actions[0].choices[args.command].print_usage(sys.stderr)
        return EXIT_USAGE
    except (EmptyTraceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
