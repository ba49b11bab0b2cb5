"""Command-line entry point: ``netcomm simulate|sweep|analyze|plot|validate-config``.

Exit codes: 0 success, 1 error, 2 usage error, 3 sweep finished with some
failed runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis
from .experiment import (
    ConfigError,
    SimulationConfig,
    preset,
    read_results,
    run_simulation,
    run_sweep,
    write_episodes,
    write_results,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3

OUT_ENV = "NETCOMM_OUT"
log = logging.getLogger("netcomm")


def _default_out(sub: str) -> str:
    return str(Path(os.environ.get(OUT_ENV, "netcomm-out")) / sub)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netcomm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress (default: off)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="run one simulation")
    p.add_argument("--config", help="JSON config file (default: built-in defaults)")
    p.add_argument("--seed", type=int, help="run seed; overrides the config (default: config value, 0)")
    p.add_argument("--out", default=_default_out("simulate"), help=f"output directory (default: ${OUT_ENV}/simulate)")
    p.add_argument("--engine", choices=["native", "python"], help="round-loop engine (default: native if built)")
    p.add_argument("--no-episodes", action="store_true", help="skip the per-episode JSONL log (default: write it)")
    p.add_argument("--save-network", action="store_true", help="also write network.txt (default: off)")

    p = sub.add_parser("sweep", help="run an experiment preset")
    p.add_argument("--experiment", required=True, choices=["1", "2", "3"])
    p.add_argument("--scale", choices=["full", "desk"], default="desk", help="grid size (default: desk)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs (default: 1)")
    p.add_argument("--rounds", type=int, help="override rounds per run (default: 120000)")
    p.add_argument("--window", type=int, help="override metric window (default: 10000)")
    p.add_argument("--engine", choices=["native", "python"], help="round-loop engine (default: native if built)")
    p.add_argument("--out", default=_default_out("sweep"), help=f"output directory (default: ${OUT_ENV}/sweep)")

    p = sub.add_parser("analyze", help="aggregate results and fit regressions")
    p.add_argument("--in", dest="inp", default=_default_out("sweep"), help="directory or results.csv (default: $NETCOMM_OUT/sweep)")
    p.add_argument("--out", default=_default_out("analysis"), help="output directory (default: $NETCOMM_OUT/analysis)")

    p = sub.add_parser("plot", help="render SVG panels from analyze output")
    p.add_argument("--in", dest="inp", default=_default_out("analysis"), help="analyze output directory (default: $NETCOMM_OUT/analysis)")
    p.add_argument("--out", default=_default_out("figures"), help="figure directory (default: $NETCOMM_OUT/figures)")

    p = sub.add_parser("validate-config", help="check a simulation config file")
    p.add_argument("config")
    return parser


def _results_path(inp: str) -> Path:
    path = Path(inp)
    return path / "results.csv" if path.is_dir() else path


def cmd_simulate(args) -> int:
    cfg = SimulationConfig.load(args.config) if args.config else SimulationConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    result = run_simulation(cfg, engine=args.engine)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results([result], out / "results.csv")
    if not args.no_episodes:
        write_episodes(result.episodes, out / "episodes.jsonl")
    if args.save_network:
        result.network.save(out / "network.txt")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    # wall time goes to stdout only so repeated runs leave identical files
    (out / "run_info.json").write_text(json.dumps({"engine": result.engine}, indent=2) + "\n")
    if result.series:
        from .experiment import METRIC_COLUMNS

        lines = [",".join(["round"] + METRIC_COLUMNS)]
        lines += [",".join(repr(row[c]) if c != "round" else str(row[c]) for c in ["round"] + METRIC_COLUMNS) for row in result.series]
        (out / "series.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'results.csv'} (engine={result.engine}, {result.wall_time:.1f}s)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = preset(args.experiment, args.scale)
    if args.rounds is not None:
        spec.rounds = args.rounds
    if args.window is not None:
        spec.metric_window = args.window
    if spec.metric_window > spec.rounds:
        spec.metric_window = spec.rounds
    if args.jobs < 1:
        raise ConfigError("jobs", "must be >= 1")

    def progress(done, total):
        log.info("run %d/%d done", done, total)

    outcome = run_sweep(spec, args.seed, args.jobs, engine=args.engine, progress=progress)
    out = Path(args.out)
    write_results(outcome.results, out / "results.csv")
    if outcome.failures:
        (out / "failures.json").write_text(
            json.dumps([f.__dict__ for f in outcome.failures], indent=2) + "\n"
        )
    print(f"{len(outcome.results)}/{spec.n_runs} runs over {len(spec.cells)} conditions -> {out / 'results.csv'}")
    if not outcome.failures:
        return EXIT_OK
    return EXIT_PARTIAL if outcome.results else EXIT_ERROR


def cmd_analyze(args) -> int:
    rows = read_results(_results_path(args.inp))
    written = analysis.emit_tables(rows, args.out)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_plot(args) -> int:
    inp = Path(args.inp)
    summaries = sorted(inp.glob("summary_exp*.csv"))
    if not summaries:
        raise analysis.NoDataError(f"no summary_exp*.csv files in {inp}")
    for path in summaries:
        exp = path.stem[len("summary_exp"):]
        for fig in analysis.emit_plots(analysis.read_summary(path), exp, args.out):
            print(fig)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = SimulationConfig.load(args.config)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "plot": cmd_plot,
    "validate-config": cmd_validate,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: invalid config field {exc}", file=sys.stderr)
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
