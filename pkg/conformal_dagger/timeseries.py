"""
Intermittent-label time-series benchmark.

Streams a series, refits the AR base model every step, calibrates a
lower/upper pair of scalar IQT trackers on the signed residuals, reveals each
label with probability p_t, and scores every step against the oracle label.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator
from typing_extensions import Annotated

from .conformal import (
    BoundReport,
    GammaSchedule,
    ObservationEvent,
    ScalarTracker,
    ScheduleConfig,
    ScheduleKind,
    iqt_step,
    score_signed_residual,
    tracker_bound_report,
)
from .exceptions import DatasetNotFoundError, InsufficientHistoryError, InvalidConfigurationError
from .forecaster import ArModel
from .seeding import named_rng

logger = logging.getLogger(__name__)

MIN_STREAM_LENGTH = 200


class CsvSource(BaseModel):
    kind: Literal["csv"] = "csv"
    path: str = Field(..., description="CSV file with a header row")
    column: str = Field(..., description="Numeric value column")


class SyntheticGenerator(str, Enum):
    AR1_DRIFT = "ar1_drift"
    SINUSOID = "sinusoid"
    REGIME_SWITCH = "regime_switch"


class SyntheticSource(BaseModel):
    kind: Literal["synthetic"] = "synthetic"
    generator: SyntheticGenerator = Field(default=SyntheticGenerator.REGIME_SWITCH)
    seed: int = Field(default=0)
    length: int = Field(default=1000, ge=MIN_STREAM_LENGTH)


DatasetSource = Annotated[Union[CsvSource, SyntheticSource], Field(discriminator="kind")]


class DatasetSpec(BaseModel):
    name: str
    source: DatasetSource
    lookback_k: Optional[int] = Field(default=None, ge=1, description="Per-dataset B_hat window override")


@dataclass
class DatasetStream:
    name: str
    values: np.ndarray
    source: Any = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < MIN_STREAM_LENGTH:
            raise InvalidConfigurationError(
                "values", self.values.size, f"stream '{self.name}' needs at least {MIN_STREAM_LENGTH} values"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidConfigurationError("values", "non-finite", f"stream '{self.name}' has non-finite values")


def synthetic_series(generator: Union[str, SyntheticGenerator], seed: int, length: int) -> np.ndarray:
    rng = named_rng(seed, "synthetic", SyntheticGenerator(generator).value)
    t = np.arange(length)
    noise = rng.standard_normal(length)
    generator = SyntheticGenerator(generator)
    if generator == SyntheticGenerator.SINUSOID:
        return 10.0 * np.sin(2.0 * math.pi * t / 50.0) + noise

    y = np.empty(length)
    level = 5.0
    if generator == SyntheticGenerator.AR1_DRIFT:
        y[0] = level
        for i in range(1, length):
            y[i] = 0.8 * y[i - 1] + 1.0 + 0.002 * i + noise[i]
        return y

    # regime switch: AR(1) around a level that jumps, with alternating calm/volatile blocks
    y[0] = level
    for i in range(1, length):
        block = i // 250
        if i % 250 == 0:
            level += 20.0 * (1 if block % 2 else -1)
        scale = 0.5 if block % 2 == 0 else 5.0
        y[i] = level + 0.7 * (y[i - 1] - level) + scale * noise[i]
    return y


def load_stream(spec: DatasetSpec) -> DatasetStream:
    source = spec.source
    if isinstance(source, SyntheticSource):
        values = synthetic_series(source.generator, source.seed, source.length)
        return DatasetStream(spec.name, values, source)

    path = Path(source.path)
    if not path.is_file():
        raise DatasetNotFoundError(str(path))
    frame = pd.read_csv(path)
    if source.column not in frame.columns:
        raise InvalidConfigurationError(
            "column", source.column, f"column '{source.column}' not in {path} (have {list(frame.columns)})"
        )
    values = pd.to_numeric(frame[source.column], errors="coerce").dropna().to_numpy(dtype=float)
    return DatasetStream(spec.name, values, source)


class BenchConfig(BaseModel):
    alpha: float = Field(default=0.1, gt=0, lt=1, description="Target miscoverage")
    p: Union[float, List[float]] = Field(default=0.1, description="Constant p_t or one p_t per evaluated step")
    lr: float = Field(default=0.1, gt=0)
    p_dependent: bool = Field(default=True, description="IQT-pd when true, IQT-pi when false")
    schedule: ScheduleKind = Field(default=ScheduleKind.LOOKBACK)
    lookback_k: int = Field(default=100, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    warmup: int = Field(default=50, ge=4, description="Leading points used only to fit the AR model")
    order: int = Field(default=3, ge=1)
    fit_window: Optional[int] = Field(default=None)
    ma_window: int = Field(default=50, ge=1)
    q0: float = Field(default=0.0, ge=0)

    @field_validator("p")
    @classmethod
    def _check_p(cls, value):
        values = value if isinstance(value, list) else [value]
        if not values or any(not 0.0 < v <= 1.0 for v in values):
            raise ValueError("observation probabilities must lie in (0, 1]")
        return value

    @property
    def side_alpha(self) -> float:
        """Each one-sided tracker targets alpha / 2 so the two-sided interval covers 1 - alpha"""
        return self.alpha / 2

    @property
    def variant(self) -> str:
        return "pd" if self.p_dependent else "pi"

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(
            kind=self.schedule,
            gamma=self.lr,
            lr=self.lr,
            lookback_k=self.lookback_k,
            p_dependent=self.p_dependent,
        )

    def probabilities(self, steps: int) -> np.ndarray:
        if isinstance(self.p, list):
            if len(self.p) != steps:
                raise InvalidConfigurationError(
                    "p", len(self.p), f"custom p sequence has {len(self.p)} entries, stream needs {steps}"
                )
            return np.asarray(self.p, dtype=float)
        return np.full(steps, float(self.p))


@dataclass
class BenchResult:
    seed: int
    marginal_coverage: float
    longest_err_run: int
    mean_interval_size: float
    coverage_trace: np.ndarray
    interval_trace: np.ndarray
    bound_lo: BoundReport
    bound_hi: BoundReport
    steps: pd.DataFrame = field(repr=False, default=None)

    def summary(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "marginal_coverage": self.marginal_coverage,
            "longest_err_run": self.longest_err_run,
            "mean_interval_size": self.mean_interval_size,
            "bound_lo": self.bound_lo.bound,
            "gap_lo": self.bound_lo.gap,
            "bound_hi": self.bound_hi.bound,
            "gap_hi": self.bound_hi.gap,
        }


def moving_average(trace: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean; the first window-1 entries average the available prefix"""
    x = np.asarray(trace, dtype=float)
    if window < 1:
        raise InvalidConfigurationError("window", window, "moving-average window must be at least 1")
    if x.size == 0:
        raise InsufficientHistoryError(1, 0)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    start = np.maximum(0, idx - window + 1)
    return (csum[idx + 1] - csum[start]) / (idx + 1 - start)


def longest_error_run(errs: Sequence[int]) -> int:
    longest = current = 0
    for err in errs:
        current = current + 1 if err else 0
        longest = max(longest, current)
    return longest


def run_bench_seed(stream: DatasetStream, config: BenchConfig, seed: int) -> BenchResult:
    """One seeded pass over the stream"""
    values = stream.values
    n_eval = values.size - config.warmup
    if config.warmup < config.order + 1 or n_eval < 1:
        raise InvalidConfigurationError(
            "warmup", config.warmup, f"stream of {values.size} points cannot support warmup {config.warmup}"
        )
    probabilities = config.probabilities(n_eval)
    rng = named_rng(seed, "obs")
    schedule = GammaSchedule(config.schedule_config())
    scale = max(float(np.max(np.abs(values))), 1.0)
    lo = ScalarTracker(config.side_alpha, bound_B=max(scale, config.q0), schedule=schedule.spawn(), q0=config.q0)
    hi = ScalarTracker(config.side_alpha, bound_B=max(scale, config.q0), schedule=schedule.spawn(), q0=config.q0)
    model = ArModel(order=config.order, fit_window=config.fit_window)

    rows: Dict[str, list] = {k: [] for k in ("t", "y", "yhat", "lower", "upper", "obs", "err")}
    errs_lo, errs_hi, scores_lo, scores_hi = [], [], [], []
    for i, t in enumerate(range(config.warmup, values.size)):
        history = values[:t]
        yhat = model.fit(history).predict_next(history)
        lower, upper = yhat - lo.q, yhat + hi.q
        y = values[t]
        s_lo, s_hi = score_signed_residual(yhat, y)
        err_lo, err_hi = lo.miscovered(s_lo), hi.miscovered(s_hi)
        p_t = float(probabilities[i])
        observed = bool(rng.random() < p_t)
        if observed:
            iqt_step(lo, ObservationEvent.scalar(p_t, s_lo))
            iqt_step(hi, ObservationEvent.scalar(p_t, s_hi))
        else:
            iqt_step(lo, ObservationEvent.hidden(p_t))
            iqt_step(hi, ObservationEvent.hidden(p_t))

        errs_lo.append(err_lo)
        errs_hi.append(err_hi)
        scores_lo.append(s_lo)
        scores_hi.append(s_hi)
        rows["t"].append(t)
        rows["y"].append(y)
        rows["yhat"].append(yhat)
        rows["lower"].append(lower)
        rows["upper"].append(upper)
        rows["obs"].append(int(observed))
        rows["err"].append(int(err_lo or err_hi))

    steps = pd.DataFrame(rows)
    err = steps["err"].to_numpy()
    widths = (steps["upper"] - steps["lower"]).to_numpy()
    result = BenchResult(
        seed=seed,
        marginal_coverage=float(1.0 - err.mean()),
        longest_err_run=longest_error_run(err),
        mean_interval_size=float(widths.mean()),
        coverage_trace=moving_average(1 - err, config.ma_window),
        interval_trace=widths,
        bound_lo=tracker_bound_report(lo, errs_lo, scores_lo),
        bound_hi=tracker_bound_report(hi, errs_hi, scores_hi),
        steps=steps,
    )
    logger.info(
        "bench %s IQT-%s lr=%s seed=%d: coverage=%.3f longest_run=%d mean_size=%.3f",
        stream.name, config.variant, config.lr, seed,
        result.marginal_coverage, result.longest_err_run, result.mean_interval_size,
    )
    return result


def run_bench(stream: DatasetStream, config: BenchConfig) -> List[BenchResult]:
    return [run_bench_seed(stream, config, seed) for seed in config.seeds]


def summarize(results: Sequence[BenchResult]) -> Dict[str, Any]:
    """Per-seed metrics plus mean and population std across seeds"""
    keys = ("marginal_coverage", "longest_err_run", "mean_interval_size")
    summary: Dict[str, Any] = {"seeds": [r.summary() for r in results]}
    for key in keys:
        values = np.array([getattr(r, key) for r in results], dtype=float)
        summary[key] = {"mean": float(values.mean()), "std": float(values.std())}
    summary["bound_holds"] = all(r.bound_lo.holds and r.bound_hi.holds for r in results)
    return summary
