"""
Fan-out of independent runs and the files they leave behind.

Runs are independent processes; results come back in submission order and
are sorted by run key before anything is written, so output files do not
depend on scheduling.
"""
import asyncio
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from . import __version__
from .config import BenchSuiteConfig, DaggerSuiteConfig, config_hash
from .dagger import DaggerConfig, RunResult, run_full_experiment
from .env import write_trace_csv
from .exceptions import DatasetNotFoundError
from .metrics import MetricsCollector
from .timeseries import BenchConfig, BenchResult, CsvSource, DatasetSpec, load_stream, run_bench_seed, summarize

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
METRICS_COLUMNS = [
    "episode", "method", "scenario", "seed", "intervention_pct", "miscoverage", "decision_dev", "trajectory_dev",
]


class RunManifest(BaseModel):
    command: str
    config_hash: str
    seeds: List[int]
    git_describe: str
    version: str = Field(default=__version__)
    started_at: str
    wall_clock_seconds: float
    output_paths: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict, description="Validated config; enough to rerun")


def git_describe() -> str:
    try:
        completed = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5, check=False,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return completed.stdout.strip() or "unknown"


class ExperimentRunner:
    """
    Runs a function over many argument tuples.

    jobs == 1 runs inline; otherwise every call goes to a process pool and
    the event loop gathers the futures.
    """

    def __init__(self, jobs: int = 1):
        self.jobs = max(1, int(jobs))

    async def run_batch(self, fn: Callable, argsets: Sequence[Tuple]) -> List[Any]:
        if self.jobs == 1 or len(argsets) <= 1:
            return [fn(*args) for args in argsets]
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            tasks = [loop.run_in_executor(pool, fn, *args) for args in argsets]
            return await asyncio.gather(*tasks)

    def run(self, fn: Callable, argsets: Sequence[Tuple]) -> List[Any]:
        return asyncio.run(self.run_batch(fn, argsets))


def _clean(value: Any) -> Any:
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers"""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(payload: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    path = out_dir / "manifest.json"
    write_json(manifest.model_dump(mode="json"), path)
    return path


# bench

def p_label(p, index: int) -> str:
    return f"p{p:g}" if not isinstance(p, list) else f"pcustom{index}"


def bench_job(spec: DatasetSpec, config: BenchConfig, seed: int) -> BenchResult:
    return run_bench_seed(load_stream(spec), config, seed)


def check_datasets(suite: BenchSuiteConfig) -> None:
    """Fail before fan-out if any CSV dataset is missing"""
    for dataset in suite.datasets:
        if isinstance(dataset.source, CsvSource) and not Path(dataset.source.path).is_file():
            raise DatasetNotFoundError(dataset.source.path, f"dataset '{dataset.name}'")


@dataclass
class SuiteOutput:
    out_dir: Path
    paths: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def run_bench_suite(suite: BenchSuiteConfig, out_dir: Path, runner: ExperimentRunner,
                    collector: Optional[MetricsCollector] = None) -> SuiteOutput:
    check_datasets(suite)
    groups = []
    for dataset, config in suite.expand():
        p_index = next(i for i, p in enumerate(suite.ps) if p == config.p)
        groups.append((dataset, config, p_label(config.p, p_index)))
    argsets = [(dataset, config, seed) for dataset, config, _ in groups for seed in config.seeds]
    logger.info("bench: %d groups, %d runs, jobs=%d", len(groups), len(argsets), runner.jobs)
    results = iter(runner.run(bench_job, argsets))

    output = SuiteOutput(out_dir)
    summary_groups = []
    for dataset, config, plabel in groups:
        seed_results = sorted((next(results) for _ in config.seeds), key=lambda r: r.seed)
        group_dir = out_dir / "bench" / dataset.name / plabel / f"lr{config.lr:g}" / f"iqt-{config.variant}"
        for result in seed_results:
            path = group_dir / f"seed{result.seed}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            result.steps.to_csv(path, index=False, float_format=FLOAT_FORMAT)
            output.paths.append(path)
            if collector is not None:
                steps = result.steps
                collector.record_steps(
                    method=f"iqt-{config.variant}", scenario=dataset.name, steps=len(steps),
                    observations=int(steps["obs"].sum()), miscoverage=int(steps["err"].sum()),
                    width=float(steps["upper"].iloc[-1] - steps["lower"].iloc[-1]),
                )
                if not (result.bound_lo.holds and result.bound_hi.holds):
                    collector.record_bound_violation(f"iqt-{config.variant}")
        summary_groups.append({
            "dataset": dataset.name,
            "p": plabel,
            "lr": config.lr,
            "variant": config.variant,
            "summary": summarize(seed_results),
        })
    summary_path = out_dir / "summary.json"
    output.summary = {"groups": summary_groups}
    write_json(output.summary, summary_path)
    output.paths.append(summary_path)
    return output


# dagger

def dagger_job(config: DaggerConfig) -> RunResult:
    return run_full_experiment(config)


def _panels(results: Sequence[RunResult]) -> List[Dict[str, Any]]:
    """Per (label, method, scenario): per-episode mean and std across seeds of each metric"""
    grouped: Dict[Tuple[str, str, str], List[RunResult]] = {}
    for result in results:
        m = result.metrics
        grouped.setdefault((m.label, m.method, m.scenario), []).append(result)
    panels = []
    for (label, method, scenario), runs in sorted(grouped.items()):
        traces = [r.metrics.traces() for r in runs]
        panel: Dict[str, Any] = {"label": label, "method": method, "scenario": scenario,
                                 "seeds": [r.metrics.seed for r in runs]}
        for metric in ("intervention_pct", "miscoverage", "decision_dev", "trajectory_dev"):
            stacked = np.array([t[metric] for t in traces], dtype=float)
            if stacked.size == 0 or np.all(np.isnan(stacked)):
                panel[metric] = {"mean": [math.nan] * stacked.shape[-1], "std": [math.nan] * stacked.shape[-1]}
                continue
            panel[metric] = {
                "mean": np.nanmean(stacked, axis=0).tolist(),
                "std": np.nanstd(stacked, axis=0).tolist(),
            }
        panel["initial_decision_dev"] = float(np.mean([r.metrics.initial_decision_dev for r in runs]))
        panel["initial_trajectory_dev"] = float(np.mean([r.metrics.initial_trajectory_dev for r in runs]))
        panels.append(panel)
    return panels


def run_dagger_suite(suite: DaggerSuiteConfig, out_dir: Path, runner: ExperimentRunner,
                     collector: Optional[MetricsCollector] = None) -> SuiteOutput:
    configs = suite.expand()
    for config in configs:
        if config.episodes:
            config.scenario.validate_for(config.episodes)
    logger.info("dagger: %d runs, jobs=%d", len(configs), runner.jobs)
    results = sorted(runner.run(dagger_job, [(c,) for c in configs]), key=lambda r: r.config.run_key)

    output = SuiteOutput(out_dir)
    rows = []
    for result in results:
        name = result.config.run_name
        for row in result.metrics.rows():
            if suite.sweep:
                row["label"] = result.config.label
            rows.append(row)
        log_dir = out_dir / "logs" / name
        for log in result.logs:
            path = log_dir / f"episode{log.episode:02d}_exec{log.execution}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            log.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
            output.paths.append(path)
        learner_rollout, expert_rollout = result.final_rollouts
        for tag, rollout_log in (("learner", learner_rollout), ("expert", expert_rollout)):
            if rollout_log is not None:
                path = log_dir / f"rollout_{tag}.csv"
                write_trace_csv(rollout_log.trace(), path)
                output.paths.append(path)
        if collector is not None:
            _record_run(collector, result)

    columns = METRICS_COLUMNS + (["label"] if suite.sweep else [])
    metrics_path = out_dir / "metrics.csv"
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns).to_csv(metrics_path, index=False, float_format=FLOAT_FORMAT)
    output.paths.append(metrics_path)

    output.summary = {
        "panels": _panels(results),
        "runs": [
            {
                "method": r.metrics.method,
                "scenario": r.metrics.scenario,
                "seed": r.metrics.seed,
                "label": r.metrics.label,
                "miscoverage_rate": r.metrics.miscoverage_rate,
                "intervention_pct": r.metrics.intervention_pct,
                "decision_deviation": r.metrics.decision_deviation,
                "trajectory_deviation": r.metrics.trajectory_deviation,
                "bound_holds": [e.bound_holds for e in r.metrics.episodes],
            }
            for r in results
        ],
    }
    summary_path = out_dir / "summary.json"
    write_json(output.summary, summary_path)
    output.paths.append(summary_path)
    return output


def _record_run(collector: MetricsCollector, result: RunResult) -> None:
    m = result.metrics
    collector.record_run()
    records = [r for log in result.logs for r in log.records]
    widths = [r.width for r in records if not math.isnan(r.width)]
    collector.record_steps(
        method=m.method, scenario=m.scenario, steps=len(records),
        queries=sum(r.query for r in records),
        observations=sum(r.observed for r in records),
        miscoverage=int(sum(r.err for r in records if not math.isnan(r.err))),
        width=widths[-1] if widths else None,
    )
    for duration in result.retrain_seconds:
        collector.record_retrain(m.method, duration)
    for episode in m.episodes:
        if episode.bound_holds is False:
            collector.record_bound_violation(m.method)


def finish(command: str, suite: BaseModel, seeds: Sequence[int], output: SuiteOutput,
           collector: MetricsCollector, started: float, started_at: str) -> RunManifest:
    """Write metrics.prom and the manifest for one output directory"""
    prom_path = output.out_dir / "metrics.prom"
    collector.write_textfile(prom_path)
    manifest = RunManifest(
        command=command,
        config_hash=config_hash(suite),
        seeds=list(seeds),
        git_describe=git_describe(),
        started_at=started_at,
        wall_clock_seconds=time.perf_counter() - started,
        output_paths=[str(p.relative_to(output.out_dir)) for p in output.paths + [prom_path]],
        config=suite.model_dump(mode="json"),
    )
    write_manifest(output.out_dir, manifest)
    return manifest


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
