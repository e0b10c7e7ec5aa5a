"""
Online conformal update rules under intermittently observed labels.

Quantile tracking (QT), intermittent quantile tracking (IQT, scalar and
per-dimension vector form, p-dependent and p-independent step sizes),
adaptive conformal inference (ACI) and its intermittent extension (IACI),
together with the coverage bounds the harness checks runs against.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .exceptions import (
    DimensionMismatchError,
    EmptyWindowError,
    InsufficientHistoryError,
    InvalidConfigurationError,
    InvalidObservationError,
    InvalidProbabilityError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    LOOKBACK = "lookback"


class ScheduleConfig(BaseModel):
    kind: ScheduleKind = Field(default=ScheduleKind.LOOKBACK, description="constant gamma or lr * B_hat")
    gamma: float = Field(default=0.1, gt=0, description="Step size for the constant schedule")
    lr: float = Field(default=0.1, gt=0, description="Multiplier on B_hat for the lookback schedule")
    lookback_k: int = Field(default=100, ge=1, description="Observed scores kept for B_hat")
    initial_bound: float = Field(default=1.0, gt=0, description="B_hat used before any usable score is observed")
    p_dependent: bool = Field(default=True, description="Keep the 1/p_t factor (IQT-pd) or cancel it (IQT-pi)")


def _check_probability(name: str, p: float) -> None:
    if not (0.0 < p <= 1.0) or math.isnan(p):
        raise InvalidProbabilityError(name, p)


class GammaSchedule:
    """
    Step-size schedule for one tracked quantile.

    base_gamma() is gamma (constant) or lr * B_hat_t (lookback), where B_hat_t
    is the largest absolute score among the last k observed scores. IQT-pd
    uses gamma_t = base and steps by gamma_t / p_t; IQT-pi uses
    gamma_t = base * p_t so the division cancels and the step is base.
    """

    def __init__(self, config: ScheduleConfig):
        self.config = config
        self._scores: deque = deque(maxlen=config.lookback_k)

    @property
    def p_dependent(self) -> bool:
        return self.config.p_dependent

    def bound_estimate(self) -> float:
        """B_hat_t over the lookback window of observed scores"""
        if not self._scores:
            return self.config.initial_bound
        bound = max(abs(s) for s in self._scores)
        return bound if bound > 0 else self.config.initial_bound

    def base_gamma(self) -> float:
        if self.config.kind == ScheduleKind.CONSTANT:
            return self.config.gamma
        return self.config.lr * self.bound_estimate()

    def gamma(self, p: float) -> float:
        """gamma_t as it enters the coverage bound"""
        base = self.base_gamma()
        return base if self.config.p_dependent else base * p

    def step_size(self, p: float) -> float:
        """gamma_t / p_t, the multiplier applied to (err - alpha)"""
        base = self.base_gamma()
        return base / p if self.config.p_dependent else base

    def record(self, score: float) -> None:
        self._scores.append(float(score))

    @property
    def history(self) -> List[float]:
        return list(self._scores)

    def spawn(self) -> "GammaSchedule":
        """Fresh schedule with the same configuration and an empty history"""
        return GammaSchedule(self.config)

    def to_record(self) -> Dict[str, Any]:
        record = {f"schedule.{k}": v for k, v in self.config.model_dump(mode="json").items()}
        record["schedule.history"] = self.history
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "GammaSchedule":
        fields = {
            k[len("schedule."):]: v
            for k, v in record.items()
            if k.startswith("schedule.") and k != "schedule.history"
        }
        schedule = cls(ScheduleConfig(**fields))
        for score in record.get("schedule.history", []):
            schedule.record(score)
        return schedule


@dataclass(frozen=True)
class ObservationEvent:
    """One timestep's optional label, with its observation probability p_t"""
    observed: bool
    p: float
    score: Optional[float] = None
    score_lo: Optional[np.ndarray] = None
    score_hi: Optional[np.ndarray] = None

    def __post_init__(self):
        _check_probability("p", self.p)
        has_score = self.score is not None or self.score_lo is not None or self.score_hi is not None
        if self.observed and not has_score:
            raise InvalidObservationError(self.observed, "observed event carries no score")
        if not self.observed and has_score:
            raise InvalidObservationError(self.observed, "unobserved event carries a score")
        if (self.score_lo is None) != (self.score_hi is None):
            raise InvalidObservationError(self.observed, "score_lo and score_hi must be given together")

    @classmethod
    def hidden(cls, p: float) -> "ObservationEvent":
        return cls(observed=False, p=p)

    @classmethod
    def scalar(cls, p: float, score: float) -> "ObservationEvent":
        return cls(observed=True, p=p, score=float(score))

    @classmethod
    def vector(cls, p: float, score_lo: ArrayLike, score_hi: ArrayLike) -> "ObservationEvent":
        return cls(
            observed=True,
            p=p,
            score_lo=np.asarray(score_lo, dtype=float),
            score_hi=np.asarray(score_hi, dtype=float),
        )


def score_signed_residual(prediction, label) -> Tuple[Any, Any]:
    """(s_lo, s_hi) = (prediction - label, label - prediction); works elementwise on arrays"""
    if isinstance(prediction, (list, tuple)) or isinstance(label, (list, tuple)):
        prediction = np.asarray(prediction, dtype=float)
        label = np.asarray(label, dtype=float)
    return prediction - label, label - prediction


def coverage_error(s: float, q: float) -> int:
    """1 when the score exceeds the quantile (label outside the set), else 0"""
    return int(s > q)


class ScalarTracker:
    """
    Online quantile estimate q_t for one nonconformity score stream.

    q is never clipped: after any run it stays within
    [-alpha * N, B + (1 - alpha) * N], N the largest observed step gamma_t / p_t.
    Every update (observed or not) appends gamma_t, p_t and the observed flag
    to the trace used for the realized coverage bound.
    """

    def __init__(self, alpha: float, bound_B: float, schedule: GammaSchedule, q0: float = 0.0):
        if not 0.0 < alpha < 1.0:
            raise InvalidConfigurationError("alpha", alpha, f"alpha must lie in (0, 1), got {alpha}")
        if bound_B <= 0:
            raise InvalidConfigurationError("bound_B", bound_B, f"bound_B must be positive, got {bound_B}")
        if not 0.0 <= q0 <= bound_B:
            raise InvalidConfigurationError("q0", q0, f"initial quantile must lie in [0, {bound_B}], got {q0}")
        self.alpha = alpha
        self.bound_B = bound_B
        self.schedule = schedule
        self.q = float(q0)
        self.initial_q = float(q0)
        self.step_count = 0
        self.max_step = 0.0
        self.gammas: List[float] = []
        self.ps: List[float] = []
        self.observed: List[bool] = []

    def miscovered(self, score: float) -> int:
        return coverage_error(score, self.q)

    def update(self, err: int, p: float = 1.0, observed: bool = True, score: Optional[float] = None) -> "ScalarTracker":
        """q <- q + (gamma_t / p_t)(err - alpha) obs_t"""
        _check_probability("p", p)
        gamma = self.schedule.gamma(p)
        step = self.schedule.step_size(p)
        self.gammas.append(gamma)
        self.ps.append(p)
        self.observed.append(observed)
        self.step_count += 1
        if observed:
            self.q = self.q + step * (err - self.alpha)
            if step > self.max_step:
                self.max_step = step
            if score is not None:
                self.schedule.record(score)
        return self

    def reset(self, q0: Optional[float] = None) -> None:
        """Back to the initial quantile; the schedule's score history is kept"""
        self.q = self.initial_q if q0 is None else float(q0)
        self.initial_q = self.q

    def lemma_bound(self) -> Tuple[float, float]:
        return lemma_bound(self)

    def to_record(self) -> Dict[str, Any]:
        record = {
            "q": self.q,
            "initial_q": self.initial_q,
            "alpha": self.alpha,
            "bound_B": self.bound_B,
            "step_count": self.step_count,
            "max_step": self.max_step,
        }
        record.update(self.schedule.to_record())
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "ScalarTracker":
        tracker = cls(
            alpha=record["alpha"],
            bound_B=record["bound_B"],
            schedule=GammaSchedule.from_record(record),
            q0=record["initial_q"],
        )
        tracker.q = record["q"]
        tracker.step_count = record["step_count"]
        tracker.max_step = record["max_step"]
        return tracker


def qt_step(tracker: ScalarTracker, err: int, score: Optional[float] = None) -> ScalarTracker:
    """Plain quantile tracking: the label is always observed (p = 1)"""
    return tracker.update(err, p=1.0, observed=True, score=score)


def iqt_step(tracker: ScalarTracker, event: ObservationEvent) -> ScalarTracker:
    """Intermittent quantile tracking: unobserved events leave q unchanged"""
    if not event.observed:
        return tracker.update(0, p=event.p, observed=False)
    if event.score is None:
        raise InvalidObservationError(event.observed, "scalar tracker needs a scalar score")
    err = tracker.miscovered(event.score)
    return tracker.update(err, p=event.p, observed=True, score=event.score)


def lemma_bound(tracker: ScalarTracker) -> Tuple[float, float]:
    """[-alpha * N, B + (1 - alpha) * N] for the tracker's running max step N"""
    n = tracker.max_step
    return -tracker.alpha * n, tracker.bound_B + (1.0 - tracker.alpha) * n


class VectorIntervalTracker:
    """
    Per-dimension lower/upper quantiles over a d-dimensional action space.

    Each (dimension, side) is an independent ScalarTracker with its own B_hat
    history; all share one schedule configuration.
    """

    def __init__(
        self,
        dims: int,
        alpha: float,
        schedule: ScheduleConfig,
        q0_lo: Union[float, ArrayLike] = 0.01,
        q0_hi: Union[float, ArrayLike] = 0.01,
        bound_B: float = 1.0,
    ):
        if dims < 1:
            raise InvalidConfigurationError("dims", dims)
        self.dims = dims
        self.alpha = alpha
        self.schedule_config = schedule
        lo0 = self._broadcast(q0_lo, "q0_lo")
        hi0 = self._broadcast(q0_hi, "q0_hi")
        self.lo = [ScalarTracker(alpha, bound_B, GammaSchedule(schedule), float(q)) for q in lo0]
        self.hi = [ScalarTracker(alpha, bound_B, GammaSchedule(schedule), float(q)) for q in hi0]

    def _broadcast(self, value, what: str) -> np.ndarray:
        if np.ndim(value) == 0:
            return np.full(self.dims, float(value))
        arr = np.asarray(value, dtype=float)
        if arr.shape != (self.dims,):
            raise DimensionMismatchError(self.dims, arr.size, what)
        return arr

    @property
    def q_lo(self) -> np.ndarray:
        return np.array([t.q for t in self.lo])

    @property
    def q_hi(self) -> np.ndarray:
        return np.array([t.q for t in self.hi])

    @property
    def trackers(self) -> List[Tuple[str, int, ScalarTracker]]:
        return [("lo", d, t) for d, t in enumerate(self.lo)] + [("hi", d, t) for d, t in enumerate(self.hi)]

    def width(self) -> float:
        """
        u = ||upper - lower||_2, independent of the prediction. An inverted
        dimension (q_lo + q_hi < 0) is an empty interval and adds nothing.
        """
        return float(np.linalg.norm(np.clip(self.q_lo + self.q_hi, 0.0, None)))

    def reset(self, q0_lo=None, q0_hi=None) -> None:
        lo0 = None if q0_lo is None else self._broadcast(q0_lo, "q0_lo")
        hi0 = None if q0_hi is None else self._broadcast(q0_hi, "q0_hi")
        for d in range(self.dims):
            self.lo[d].reset(None if lo0 is None else lo0[d])
            self.hi[d].reset(None if hi0 is None else hi0[d])

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"dims": self.dims, "alpha": self.alpha}
        for side, d, tracker in self.trackers:
            for key, value in tracker.to_record().items():
                record[f"{side}.{d}.{key}"] = value
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "VectorIntervalTracker":
        dims = record["dims"]
        sub = {
            (side, d): {
                k[len(f"{side}.{d}."):]: v for k, v in record.items() if k.startswith(f"{side}.{d}.")
            }
            for side in ("lo", "hi")
            for d in range(dims)
        }
        first = GammaSchedule.from_record(sub[("lo", 0)]).config
        tracker = cls(dims, record["alpha"], first, bound_B=sub[("lo", 0)]["bound_B"])
        tracker.lo = [ScalarTracker.from_record(sub[("lo", d)]) for d in range(dims)]
        tracker.hi = [ScalarTracker.from_record(sub[("hi", d)]) for d in range(dims)]
        return tracker


def iqt_step_vector(tracker: VectorIntervalTracker, event: ObservationEvent) -> VectorIntervalTracker:
    """Componentwise IQT on (s_lo, s_hi); unobserved events leave both sides unchanged"""
    if not event.observed:
        for _, _, scalar in tracker.trackers:
            scalar.update(0, p=event.p, observed=False)
        return tracker
    if event.score_lo is None:
        raise InvalidObservationError(event.observed, "vector tracker needs score_lo/score_hi")
    s_lo = np.asarray(event.score_lo, dtype=float)
    s_hi = np.asarray(event.score_hi, dtype=float)
    for scores, what in ((s_lo, "score_lo"), (s_hi, "score_hi")):
        if scores.shape != (tracker.dims,):
            raise DimensionMismatchError(tracker.dims, scores.size, what)
    for d in range(tracker.dims):
        lo, hi = tracker.lo[d], tracker.hi[d]
        lo.update(lo.miscovered(s_lo[d]), p=event.p, observed=True, score=s_lo[d])
        hi.update(hi.miscovered(s_hi[d]), p=event.p, observed=True, score=s_hi[d])
    return tracker


def interval(prediction: ArrayLike, tracker: VectorIntervalTracker) -> Tuple[np.ndarray, np.ndarray]:
    """[a - q_lo, a + q_hi] elementwise"""
    a = np.asarray(prediction, dtype=float)
    if a.shape != (tracker.dims,):
        raise DimensionMismatchError(tracker.dims, a.size, "prediction")
    return a - tracker.q_lo, a + tracker.q_hi


def vector_miscoverage(label: ArrayLike, lower: np.ndarray, upper: np.ndarray) -> int:
    """1 when the label leaves [lower, upper] in any dimension"""
    y = np.asarray(label, dtype=float)
    return int(np.any((y < lower) | (y > upper)))


def coverage_bound(T: int, B: float, gammas: ArrayLike, ps: ArrayLike) -> float:
    """(B + max_t gamma_t / p_t) / T * ||Delta_{1:T}||_1 with Delta_t = 1/gamma_t - 1/gamma_{t-1}"""
    g = np.asarray(gammas, dtype=float)
    p = np.asarray(ps, dtype=float)
    if T < 1 or g.size == 0:
        raise InsufficientHistoryError(1, int(g.size))
    if g.size != T:
        raise DimensionMismatchError(T, g.size, "gamma sequence")
    if p.size != T:
        raise DimensionMismatchError(T, p.size, "probability sequence")
    if np.any(g <= 0):
        raise InvalidConfigurationError("gammas", float(g.min()), "step sizes must be positive")
    if np.any(p <= 0) or np.any(p > 1):
        bad = p[(p <= 0) | (p > 1)][0]
        raise InvalidProbabilityError("p_t", float(bad))
    inverse = 1.0 / g
    delta = np.diff(inverse, prepend=0.0)
    return float((B + np.max(g / p)) / T * np.abs(delta).sum())


def effective_score_bound(scores: ArrayLike, q1: float) -> Tuple[float, float]:
    """
    (B_eff, shift) such that scores + shift and q1 + shift lie in [0, B_eff].

    Shifting every score and q by the same constant leaves err_t and the
    update unchanged, so signed residuals can be checked against the bound.
    """
    s = np.asarray(scores, dtype=float)
    low = min(0.0, float(s.min()) if s.size else 0.0, q1)
    high = max(float(s.max()) if s.size else 0.0, q1)
    shift = -low
    bound = high + shift
    return (bound if bound > 0 else 1.0), shift


@dataclass(frozen=True)
class BoundReport:
    """Realized coverage gap of one tracker against its coverage bound"""
    T: int
    miscoverage: float
    gap: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound


def tracker_bound_report(tracker: ScalarTracker, oracle_errs: ArrayLike, oracle_scores: ArrayLike) -> BoundReport:
    """Compare mean oracle err over all steps with the bound for the tracker's realized gamma/p"""
    errs = np.asarray(oracle_errs, dtype=float)
    if errs.size != len(tracker.gammas):
        raise DimensionMismatchError(len(tracker.gammas), errs.size, "oracle err sequence")
    B, _ = effective_score_bound(oracle_scores, tracker.initial_q)
    miscoverage = float(errs.mean())
    return BoundReport(
        T=int(errs.size),
        miscoverage=miscoverage,
        gap=abs(miscoverage - tracker.alpha),
        bound=coverage_bound(errs.size, B, tracker.gammas, tracker.ps),
    )


def weighted_empirical_quantile(observed: Iterable[Tuple[float, float]], level: float) -> float:
    """
    inf{m : (1/n) * sum_i (1/p_i) * 1[s_i <= m] >= level} over the observed (score, p) pairs.

    -inf for level <= 0, +inf for level > 1 or beyond the attainable weighted mass.
    """
    pairs = list(observed)
    if not pairs and 0 <= level <= 1:
        raise EmptyWindowError(level)
    if level <= 0:
        return -math.inf
    if level > 1:
        return math.inf
    scores = np.array([s for s, _ in pairs], dtype=float)
    weights = np.array([1.0 / p for _, p in pairs], dtype=float)
    order = np.argsort(scores, kind="stable")
    mass = np.cumsum(weights[order]) / len(pairs)
    idx = int(np.searchsorted(mass, level, side="left"))
    if idx >= len(pairs):
        return math.inf
    return float(scores[order][idx])


class AciTracker:
    """
    Adaptive conformal inference on the miscoverage target alpha_t.

    The interval radius is the weighted empirical quantile of the observed
    score window at level (1 - alpha_t)(1 + 1/n). With probability one
    alpha_t stays inside [-gamma / M_T, 1 + gamma / M_T], M_T = min p so far.
    """

    def __init__(self, target_alpha: float, gamma: float, lookback_k: int = 100, alpha_1: Optional[float] = None):
        if not 0.0 < target_alpha < 1.0:
            raise InvalidConfigurationError("target_alpha", target_alpha)
        if gamma <= 0:
            raise InvalidConfigurationError("gamma", gamma)
        alpha_1 = target_alpha if alpha_1 is None else alpha_1
        if not 0.0 <= alpha_1 <= 1.0:
            raise InvalidConfigurationError("alpha_1", alpha_1)
        self.target_alpha = target_alpha
        self.gamma = gamma
        self.lookback_k = lookback_k
        self.alpha_t = float(alpha_1)
        self.alpha_1 = float(alpha_1)
        self.min_p = 1.0
        self.step_count = 0
        self.score_window: deque = deque(maxlen=lookback_k)

    def radius(self) -> float:
        n = len(self.score_window)
        level = 1.0 - self.alpha_t
        if n == 0:
            return math.inf if level >= 0 else -math.inf
        return weighted_empirical_quantile(self.score_window, level * (1.0 + 1.0 / n))

    def miscovered(self, score: float) -> int:
        return coverage_error(score, self.radius())

    def update(self, err: int, p: float = 1.0, observed: bool = True, score: Optional[float] = None) -> "AciTracker":
        """alpha <- alpha + (gamma / p_t)(target - err_t) obs_t"""
        _check_probability("p", p)
        self.min_p = min(self.min_p, p)
        self.step_count += 1
        if observed:
            self.alpha_t = self.alpha_t + (self.gamma / p) * (self.target_alpha - err)
            if score is not None:
                self.score_window.append((float(score), p))
        return self

    def lemma_bound(self) -> Tuple[float, float]:
        return -self.gamma / self.min_p, 1.0 + self.gamma / self.min_p

    def to_record(self) -> Dict[str, Any]:
        return {
            "alpha_t": self.alpha_t,
            "alpha_1": self.alpha_1,
            "gamma": self.gamma,
            "target_alpha": self.target_alpha,
            "lookback_k": self.lookback_k,
            "min_p": self.min_p,
            "step_count": self.step_count,
            "score_window": [list(pair) for pair in self.score_window],
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "AciTracker":
        tracker = cls(record["target_alpha"], record["gamma"], record["lookback_k"], record["alpha_1"])
        tracker.alpha_t = record["alpha_t"]
        tracker.min_p = record["min_p"]
        tracker.step_count = record["step_count"]
        for score, p in record["score_window"]:
            tracker.score_window.append((score, p))
        return tracker


def iaci_step(tracker: AciTracker, event: ObservationEvent) -> AciTracker:
    if not event.observed:
        return tracker.update(0, p=event.p, observed=False)
    if event.score is None:
        raise InvalidObservationError(event.observed, "IACI needs a scalar score")
    return tracker.update(tracker.miscovered(event.score), p=event.p, observed=True, score=event.score)


def aci_step(tracker: AciTracker, err: int, score: Optional[float] = None) -> AciTracker:
    """ACI with every label observed"""
    return tracker.update(err, p=1.0, observed=True, score=score)


def iaci_coverage_bound(T: int, alpha_1: float, gamma: float, min_p: float) -> float:
    """(max{alpha_1, 1 - alpha_1} + gamma / M) / (T * gamma)"""
    if T < 1:
        raise InsufficientHistoryError(1, T)
    _check_probability("min_p", min_p)
    return (max(alpha_1, 1.0 - alpha_1) + gamma / min_p) / (T * gamma)
