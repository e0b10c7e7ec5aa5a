"""
Property checks on the conformal update rules and the learner's gradients.

Each check returns a CheckResult; the CLI prints them as a table and exits
nonzero if any fails. With mutate=True the scalar tracker is swapped for one
whose miscoverage indicator is always 1, which the bound checks must catch.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Type

import numpy as np

from .conformal import (
    AciTracker,
    GammaSchedule,
    ObservationEvent,
    ScalarTracker,
    ScheduleConfig,
    ScheduleKind,
    coverage_bound,
    iaci_coverage_bound,
    iaci_step,
    iqt_step,
    qt_step,
)
from .learner import CLASSIFIER_HIDDEN, POLICY_HIDDEN, Head, Mlp, grad_check
from .seeding import named_rng

logger = logging.getLogger(__name__)

BOUND_RUNS = 50
BOUND_STEPS = 5000
BOUND_GAMMA = 0.002
LEMMA_RUNS = 1000
LEMMA_STEPS = 200
IACI_RUNS = 1000
IACI_STEPS = 100
IACI_COVERAGE_RUNS = 20
IACI_COVERAGE_STEPS = 5000
IACI_COVERAGE_GAMMA = 0.005
GRAD_POINTS = 20
GRAD_PARAMS = 200
GRAD_TOLERANCE = 1e-4
P_LEVELS = (0.1, 0.5, 0.9)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    values: List[Dict[str, Any]] = field(default_factory=list)


class CorruptedTracker(ScalarTracker):
    """Always reports miscoverage; q drifts upward without bound"""

    def miscovered(self, score: float) -> int:
        return 1


def check_reduction(tracker_cls: Type[ScalarTracker] = ScalarTracker, seed: int = 0) -> CheckResult:
    """IQT with p_t = 1 retraces QT exactly, for both schedules and both variants"""
    rng = named_rng(seed, "verify", "reduction")
    scores = np.abs(rng.standard_normal(2000))
    worst = 0.0
    values = []
    for kind in ScheduleKind:
        for p_dependent in (True, False):
            cfg = ScheduleConfig(kind=kind, gamma=0.05, lr=0.05, p_dependent=p_dependent)
            qt = tracker_cls(0.1, 5.0, GammaSchedule(cfg), q0=1.0)
            iqt = tracker_cls(0.1, 5.0, GammaSchedule(cfg), q0=1.0)
            diff = 0.0
            for s in scores:
                qt_step(qt, qt.miscovered(s), score=s)
                iqt_step(iqt, ObservationEvent.scalar(1.0, s))
                diff = max(diff, abs(qt.q - iqt.q))
            worst = max(worst, diff)
            values.append({"schedule": kind.value, "p_dependent": p_dependent, "max_abs_diff": diff})
    return CheckResult("reduction_p1", worst == 0.0, f"max |q_QT - q_IQT| = {worst:.3g}", values)


def _bound_run(tracker_cls, kind: ScheduleKind, p_dependent: bool, run: int, seed: int) -> Dict[str, Any]:
    rng = named_rng(seed, "verify", "bound", kind.value, int(p_dependent), run)
    B = 1.0
    cfg = ScheduleConfig(kind=kind, gamma=BOUND_GAMMA, lr=BOUND_GAMMA, initial_bound=B, p_dependent=p_dependent)
    tracker = tracker_cls(0.1, B, GammaSchedule(cfg), q0=B / 2)
    ps = rng.choice(P_LEVELS, size=BOUND_STEPS)
    scores = rng.uniform(0.0, B, size=BOUND_STEPS)
    draws = rng.random(BOUND_STEPS)
    errs = np.empty(BOUND_STEPS)
    for t in range(BOUND_STEPS):
        s, p = float(scores[t]), float(ps[t])
        errs[t] = tracker.miscovered(s)
        event = ObservationEvent.scalar(p, s) if draws[t] < p else ObservationEvent.hidden(p)
        iqt_step(tracker, event)
    gap = abs(float(errs.mean()) - tracker.alpha)
    bound = coverage_bound(BOUND_STEPS, B, tracker.gammas, tracker.ps)
    return {"schedule": kind.value, "p_dependent": p_dependent, "run": run, "gap": gap, "bound": bound}


def check_coverage_bound(tracker_cls: Type[ScalarTracker] = ScalarTracker, seed: int = 0,
                         runs: int = BOUND_RUNS) -> CheckResult:
    """Realized long-run miscoverage gap stays within the coverage bound"""
    values = [
        _bound_run(tracker_cls, kind, p_dependent, run, seed)
        for kind in ScheduleKind
        for p_dependent in (True, False)
        for run in range(runs)
    ]
    failures = [v for v in values if v["gap"] > v["bound"]]
    worst = max(values, key=lambda v: v["gap"] / v["bound"])
    detail = f"worst gap {worst['gap']:.4f} vs bound {worst['bound']:.4f}; {len(failures)}/{len(values)} over"
    return CheckResult("coverage_bound", not failures, detail, values)


def check_lemma(tracker_cls: Type[ScalarTracker] = ScalarTracker, seed: int = 0,
                runs: int = LEMMA_RUNS) -> CheckResult:
    """q_t stays in [-alpha N, B + (1 - alpha) N] along random streams and schedules"""
    violations = 0
    worst_excess = 0.0
    for run in range(runs):
        rng = named_rng(seed, "verify", "lemma", run)
        B = float(rng.uniform(0.5, 5.0))
        alpha = float(rng.uniform(0.05, 0.5))
        kind = ScheduleKind.CONSTANT if rng.random() < 0.5 else ScheduleKind.LOOKBACK
        cfg = ScheduleConfig(
            kind=kind,
            gamma=float(rng.uniform(0.01, 1.0)),
            lr=float(rng.uniform(0.01, 1.0)),
            lookback_k=int(rng.integers(1, 50)),
            p_dependent=bool(rng.random() < 0.5),
        )
        tracker = tracker_cls(alpha, B, GammaSchedule(cfg), q0=float(rng.uniform(0.0, B)))
        for _ in range(LEMMA_STEPS):
            p = float(rng.uniform(0.05, 1.0))
            if rng.random() < p:
                iqt_step(tracker, ObservationEvent.scalar(p, float(rng.uniform(0.0, B))))
            else:
                iqt_step(tracker, ObservationEvent.hidden(p))
            lower, upper = tracker.lemma_bound()
            if not lower <= tracker.q <= upper:
                violations += 1
                worst_excess = max(worst_excess, tracker.q - upper, lower - tracker.q)
                break
    detail = f"{violations}/{runs} streams left the bound" + (f" (by {worst_excess:.3g})" if violations else "")
    return CheckResult("quantile_lemma", violations == 0, detail)


def check_iaci_lemma(seed: int = 0, runs: int = IACI_RUNS) -> CheckResult:
    """alpha_t stays in [-gamma / M_T, 1 + gamma / M_T]"""
    violations = 0
    for run in range(runs):
        rng = named_rng(seed, "verify", "iaci", run)
        tracker = AciTracker(
            target_alpha=float(rng.uniform(0.05, 0.5)),
            gamma=float(rng.uniform(0.001, 0.2)),
            lookback_k=int(rng.integers(5, 100)),
        )
        for _ in range(IACI_STEPS):
            p = float(rng.uniform(0.05, 1.0))
            if rng.random() < p:
                iaci_step(tracker, ObservationEvent.scalar(p, float(rng.standard_normal())))
            else:
                iaci_step(tracker, ObservationEvent.hidden(p))
            lower, upper = tracker.lemma_bound()
            if not lower <= tracker.alpha_t <= upper:
                violations += 1
                break
    return CheckResult("iaci_lemma", violations == 0, f"{violations}/{runs} streams left the bound")


def _iaci_coverage_run(tracker_cls: Type[AciTracker], run: int, seed: int) -> Dict[str, Any]:
    rng = named_rng(seed, "verify", "iaci_coverage", run)
    tracker = tracker_cls(target_alpha=0.1, gamma=IACI_COVERAGE_GAMMA, lookback_k=100)
    ps = rng.choice(P_LEVELS, size=IACI_COVERAGE_STEPS)
    scores = rng.standard_normal(IACI_COVERAGE_STEPS)
    draws = rng.random(IACI_COVERAGE_STEPS)
    errs = np.empty(IACI_COVERAGE_STEPS)
    weighted = np.zeros(IACI_COVERAGE_STEPS)
    for t in range(IACI_COVERAGE_STEPS):
        s, p = float(scores[t]), float(ps[t])
        errs[t] = tracker.miscovered(s)
        observed = draws[t] < p
        if observed:
            weighted[t] = errs[t] / p
        iaci_step(tracker, ObservationEvent.scalar(p, s) if observed else ObservationEvent.hidden(p))
    # the bound telescopes over the observed, inverse-probability weighted errors
    gap = abs(float(weighted.mean()) - tracker.target_alpha)
    bound = iaci_coverage_bound(IACI_COVERAGE_STEPS, tracker.alpha_1, tracker.gamma, tracker.min_p)
    return {"run": run, "gap": gap, "bound": bound, "miscoverage": float(errs.mean())}


def check_iaci_coverage(tracker_cls: Type[AciTracker] = AciTracker, seed: int = 0,
                        runs: int = IACI_COVERAGE_RUNS) -> CheckResult:
    """Weighted long-run miscoverage of IACI stays within its coverage bound"""
    values = [_iaci_coverage_run(tracker_cls, run, seed) for run in range(runs)]
    failures = [v for v in values if v["gap"] > v["bound"]]
    worst = max(values, key=lambda v: v["gap"] / v["bound"])
    detail = f"worst gap {worst['gap']:.4f} vs bound {worst['bound']:.4f}; {len(failures)}/{len(values)} over"
    return CheckResult("iaci_coverage", not failures, detail, values)


def check_gamma_equals_p(tracker_cls: Type[ScalarTracker] = ScalarTracker, seed: int = 0) -> CheckResult:
    """With gamma_t = p_t the update is q + (err - alpha) obs exactly"""
    rng = named_rng(seed, "verify", "gamma_p")
    # p-independent constant schedule with gamma = 1 gives gamma_t = p_t and step 1
    cfg = ScheduleConfig(kind=ScheduleKind.CONSTANT, gamma=1.0, p_dependent=False)
    tracker = tracker_cls(0.1, 2.0, GammaSchedule(cfg), q0=1.0)
    ok = True
    values = []
    for _ in range(3):
        p = float(rng.uniform(0.1, 1.0))
        s = float(rng.uniform(0.0, 2.0))
        observed = bool(rng.random() < 0.7)
        q_before = tracker.q
        err = tracker.miscovered(s)
        iqt_step(tracker, ObservationEvent.scalar(p, s) if observed else ObservationEvent.hidden(p))
        expected = q_before + (err - tracker.alpha) * int(observed)
        ok = ok and tracker.q == expected and tracker.gammas[-1] == p
        values.append({"p": p, "observed": observed, "q": tracker.q, "expected": expected})
    return CheckResult("gamma_equals_p", ok, "3 random steps" + ("" if ok else ": mismatch"), values)


def check_gradients(seed: int = 0, points: int = GRAD_POINTS) -> CheckResult:
    """Backprop against central differences on the policy and classifier architectures"""
    rng = named_rng(seed, "verify", "grad")
    worst = 0.0
    values = []
    for name, hidden, head, out in (
        ("policy", POLICY_HIDDEN, Head.LINEAR, 4),
        ("classifier", CLASSIFIER_HIDDEN, Head.LOGISTIC, 1),
    ):
        net = Mlp([12] + hidden + [out], head, seed=seed)
        for point in range(points):
            x = rng.uniform(-1.0, 1.0, size=(1, 12))
            target = rng.uniform(0.0, 1.0, size=(1, out)) if head == Head.LOGISTIC else rng.standard_normal((1, out))
            result = grad_check(net, x, target, max_params=GRAD_PARAMS, seed=point)
            worst = max(worst, result.max_relative_error)
            values.append({"net": name, "point": point, "max_relative_error": result.max_relative_error,
                           "checked": result.checked, "excluded": result.excluded})
    return CheckResult("gradient_check", worst < GRAD_TOLERANCE,
                       f"max relative error {worst:.2e} (tolerance {GRAD_TOLERANCE:g})", values)


def run_suite(seed: int = 0, mutate: bool = False) -> List[CheckResult]:
    tracker_cls = CorruptedTracker if mutate else ScalarTracker
    if mutate:
        logger.warning("verify running with a corrupted update rule; failures are expected")
    checks: List[Callable[[], CheckResult]] = [
        lambda: check_reduction(tracker_cls, seed),
        lambda: check_coverage_bound(tracker_cls, seed),
        lambda: check_lemma(tracker_cls, seed),
        lambda: check_iaci_lemma(seed),
        lambda: check_iaci_coverage(seed=seed),
        lambda: check_gamma_equals_p(tracker_cls, seed),
        lambda: check_gradients(seed),
    ]
    results = []
    for check in checks:
        result = check()
        log = logger.info if result.passed else logger.error
        log("%s: %s (%s)", result.name, "PASS" if result.passed else "FAIL", result.detail)
        results.append(result)
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  result  detail", f"{'-' * width}  ------  ------"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL':6}  {r.detail}")
    return "\n".join(lines)
