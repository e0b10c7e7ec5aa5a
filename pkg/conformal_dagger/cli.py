"""
Command-line entry point: ``conformal-dagger {bench,dagger,verify}``.

Exit codes: 0 on success, 1 when a verify property fails, 2 on any
configuration or input error (message on stderr).
"""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from .config import Settings, load_bench_config, load_dagger_config
from .exceptions import ConformalDaggerError
from .metrics import MetricsCollector
from .runner import (
    ExperimentRunner,
    RunManifest,
    SuiteOutput,
    finish,
    git_describe,
    now_iso,
    run_bench_suite,
    run_dagger_suite,
    write_json,
    write_manifest,
)
from .verify import format_table, run_suite

logger = logging.getLogger(__name__)


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conformal-dagger",
        description="Intermittent conformal prediction benchmark and interactive imitation-learning simulator",
    )
    parser.add_argument("--log-level", default=settings.log_level,
                        help="Logging level (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("bench", "Time-series coverage benchmark over datasets, p levels, learning rates and variants"),
        ("dagger", "Reaching-task simulation of ConformalDAgger and its baselines"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="YAML experiment config")
        cmd.add_argument("--out", default=settings.output_root, help="Output directory (default: %(default)s)")
        cmd.add_argument("--jobs", type=int, default=settings.jobs, help="Worker processes (default: %(default)s)")
        cmd.add_argument("--seed", type=int, default=None, help="Run this single seed instead of the config's seeds")

    verify = sub.add_parser("verify", help="Property checks on the update rules and gradients")
    verify.add_argument("--out", default=None, help="Also write per-run check values here")
    verify.add_argument("--seed", type=int, default=0, help="Root seed for the randomized checks")
    verify.add_argument("--mutate", action="store_true",
                        help="Swap in a corrupted update rule; the bound checks must fail")
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def cmd_bench(args: argparse.Namespace) -> int:
    suite = load_bench_config(args.config)
    if args.seed is not None:
        suite = suite.model_copy(update={"seeds": [args.seed]})
    out_dir = Path(args.out)
    started, started_at = time.perf_counter(), now_iso()
    collector = MetricsCollector(run_name=f"bench:{Path(args.config).stem}")
    output = run_bench_suite(suite, out_dir, ExperimentRunner(args.jobs), collector)
    manifest = finish("bench", suite, suite.seeds, output, collector, started, started_at)
    logger.info("bench finished in %.1fs; %d files under %s",
                manifest.wall_clock_seconds, len(manifest.output_paths), out_dir)
    return 0


def cmd_dagger(args: argparse.Namespace) -> int:
    suite = load_dagger_config(args.config)
    if args.seed is not None:
        suite = suite.model_copy(update={"seeds": [args.seed]})
    out_dir = Path(args.out)
    started, started_at = time.perf_counter(), now_iso()
    collector = MetricsCollector(run_name=f"dagger:{Path(args.config).stem}")
    output = run_dagger_suite(suite, out_dir, ExperimentRunner(args.jobs), collector)
    manifest = finish("dagger", suite, suite.seeds, output, collector, started, started_at)
    logger.info("dagger finished in %.1fs; %d files under %s",
                manifest.wall_clock_seconds, len(manifest.output_paths), out_dir)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    started, started_at = time.perf_counter(), now_iso()
    results = run_suite(seed=args.seed, mutate=args.mutate)
    print(format_table(results))
    if args.out:
        out_dir = Path(args.out)
        output = SuiteOutput(out_dir)
        path = out_dir / "verify.json"
        write_json([{"name": r.name, "passed": r.passed, "detail": r.detail, "values": r.values}
                    for r in results], path)
        output.paths.append(path)
        write_manifest(out_dir, RunManifest(
            command="verify",
            config_hash="",
            seeds=[args.seed],
            git_describe=git_describe(),
            started_at=started_at,
            wall_clock_seconds=time.perf_counter() - started,
            output_paths=[str(p.relative_to(out_dir)) for p in output.paths],
            config={"seed": args.seed, "mutate": args.mutate},
        ))
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"bench": cmd_bench, "dagger": cmd_dagger, "verify": cmd_verify}


def main(argv: Optional[List[str]] = None) -> int:
    settings = Settings()
    args = build_parser(settings).parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ConformalDaggerError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
