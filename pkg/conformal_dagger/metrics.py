from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, generate_latest, write_to_textfile


class MetricsCollector:
    """
    Run counters for one CLI invocation.

    Every collector owns its CollectorRegistry so concurrent or repeated runs
    in one process never share series.
    """

    def __init__(self, run_name: str, registry: Optional[CollectorRegistry] = None):
        self.run_name = run_name
        self.registry = registry or CollectorRegistry()

        self.steps_total = Counter(
            'conformal_dagger_steps_total',
            'Deployment or stream steps processed',
            ['run', 'method', 'scenario'],
            registry=self.registry,
        )
        self.queries_total = Counter(
            'conformal_dagger_queries_total',
            'Steps where the robot-gated query fired',
            ['run', 'method', 'scenario'],
            registry=self.registry,
        )
        self.observations_total = Counter(
            'conformal_dagger_observations_total',
            'Steps with an observed expert label',
            ['run', 'method', 'scenario'],
            registry=self.registry,
        )
        self.miscoverage_total = Counter(
            'conformal_dagger_miscoverage_total',
            'Oracle miscoverage events',
            ['run', 'method', 'scenario'],
            registry=self.registry,
        )
        self.interval_width = Gauge(
            'conformal_dagger_interval_width',
            'Last conformal interval width u_t',
            ['run', 'method', 'scenario'],
            registry=self.registry,
        )
        self.retrain_seconds = Histogram(
            'conformal_dagger_retrain_duration_seconds',
            'Time spent fine-tuning after an episode',
            ['run', 'method'],
            buckets=[0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0],
            registry=self.registry,
        )
        self.bound_violations = Counter(
            'conformal_dagger_bound_violations_total',
            'Tracker runs whose realized coverage gap exceeded the bound',
            ['run', 'method'],
            registry=self.registry,
        )

        self._metrics: Dict[str, Any] = self._fresh()
        self._retrain_durations: List[float] = []

    @staticmethod
    def _fresh() -> Dict[str, Any]:
        return {
            "runs_total": 0,
            "steps_total": 0,
            "queries_total": 0,
            "observations_total": 0,
            "miscoverage_total": 0,
            "bound_violations": 0,
        }

    def record_run(self):
        self._metrics["runs_total"] += 1

    def record_steps(self, method: str, scenario: str, steps: int, queries: int = 0, observations: int = 0,
                     miscoverage: int = 0, width: Optional[float] = None):
        """Add one run's step counts; width is the last interval width seen"""
        labels = dict(run=self.run_name, method=method, scenario=scenario)
        for key, counter, amount in (
            ("steps_total", self.steps_total, steps),
            ("queries_total", self.queries_total, queries),
            ("observations_total", self.observations_total, observations),
            ("miscoverage_total", self.miscoverage_total, miscoverage),
        ):
            self._metrics[key] += amount
            counter.labels(**labels).inc(amount)
        if width is not None:
            self.interval_width.labels(**labels).set(width)

    def record_retrain(self, method: str, duration: float):
        self._retrain_durations.append(duration)
        self.retrain_seconds.labels(run=self.run_name, method=method).observe(duration)

    def record_bound_violation(self, method: str):
        self._metrics["bound_violations"] += 1
        self.bound_violations.labels(run=self.run_name, method=method).inc()

    def get_metrics(self) -> Dict[str, Any]:
        """Current snapshot, with rates once steps exist"""
        metrics = self._metrics.copy()
        steps = metrics["steps_total"]
        if steps > 0:
            metrics.update({
                "query_rate": metrics["queries_total"] / steps,
                "observation_rate": metrics["observations_total"] / steps,
                "miscoverage_rate": metrics["miscoverage_total"] / steps,
            })
        durations = sorted(self._retrain_durations)
        if durations:
            metrics.update({
                "retrain_p50": durations[int(len(durations) * 0.5)],
                "retrain_avg": sum(durations) / len(durations),
            })
        return metrics

    def get_prometheus_metrics(self) -> bytes:
        return generate_latest(self.registry)

    def write_textfile(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(path), self.registry)

    def reset(self):
        """Reset the plain-dict snapshot; Prometheus series are monotonic and stay"""
        self._metrics = self._fresh()
        self._retrain_durations.clear()
