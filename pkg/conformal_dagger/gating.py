import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .exceptions import InvalidConfigurationError, InvalidProbabilityError
from .learner import Mlp, ensemble_variance

logger = logging.getLogger(__name__)


class RobotGateKind(str, Enum):
    SIGMOID = "sigmoid"
    HARD = "hard"


class RobotGateConfig(BaseModel):
    kind: RobotGateKind = Field(default=RobotGateKind.SIGMOID)
    tau: float = Field(default=0.06, gt=0, description="Uncertainty threshold on interval width u")
    beta: float = Field(default=100.0, gt=0, description="Sigmoid temperature")


class ConformalGateConfig(BaseModel):
    alpha: float = Field(default=0.1, gt=0, lt=1)
    lr: float = Field(default=0.6, gt=0)
    lookback_k: int = Field(default=100, ge=1)
    q0: float = Field(default=0.01, ge=0, description="Initial q_lo = q_hi per action dimension")
    initial_bound: float = Field(default=0.01, gt=0, description="B_hat before the first observed residual")
    p_dependent: bool = Field(default=True)


class GateConfig(BaseModel):
    human_p: float = Field(default=0.2, ge=0, le=1, description="Human-gated feedback probability c")
    robot_gate: RobotGateConfig = Field(default_factory=RobotGateConfig)
    conformal: ConformalGateConfig = Field(default_factory=ConformalGateConfig)


class EnsembleGateConfig(BaseModel):
    members: int = Field(default=3, ge=2)
    variance_tau: float = Field(default=0.06, gt=0)
    safety_s: float = Field(default=0.03, gt=0)


class SafeGateConfig(BaseModel):
    safety_s: float = Field(default=0.01, gt=0)


class LazyGateConfig(BaseModel):
    safety_s: float = Field(default=0.03, gt=0)
    switch_back_factor: float = Field(default=0.1, gt=0, description="Return to autonomy below factor * s")

    @property
    def switch_back(self) -> float:
        return self.switch_back_factor * self.safety_s


class BaselineConfig(BaseModel):
    ensemble: EnsembleGateConfig = Field(default_factory=EnsembleGateConfig)
    safedagger: SafeGateConfig = Field(default_factory=SafeGateConfig)
    lazydagger: LazyGateConfig = Field(default_factory=LazyGateConfig)
    safe_prob_threshold: float = Field(
        default=0.5, gt=0, lt=1, description="Classifier P(safe) below this counts as unsafe"
    )
    interval_sigmas: float = Field(default=3.0, gt=0, description="Ensemble interval half-width in std units")


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def compose_obs_probability(p_h: float, p_r: float) -> float:
    """P(human gives feedback or robot asks) for independent gates"""
    for name, p in (("p_h", p_h), ("p_r", p_r)):
        if not 0.0 <= p <= 1.0 or math.isnan(p):
            raise InvalidProbabilityError(name, p, "[0, 1]")
    return p_h + p_r - p_h * p_r


def robot_gate_probability(width: float, gate: RobotGateConfig) -> float:
    if gate.kind == RobotGateKind.HARD:
        return 1.0 if width > gate.tau else 0.0
    return _logistic(gate.beta * (width - gate.tau))


@dataclass(frozen=True)
class EnsembleDecision:
    query: bool
    variance: np.ndarray
    aggregate_variance: float
    safe_prob: Optional[float]
    mean: np.ndarray
    std: np.ndarray

    def __bool__(self) -> bool:
        return self.query


def safe_probability(safety_net: Optional[Mlp], x) -> Optional[float]:
    if safety_net is None:
        return None
    return float(np.ravel(safety_net.forward(x))[0])


def ensemble_gate(
    members: Sequence,
    x,
    safety_net: Optional[Mlp],
    config: EnsembleGateConfig,
    safe_prob_threshold: float = 0.5,
    nets: Optional[Sequence[Mlp]] = None,
) -> EnsembleDecision:
    """
    Query when the ensemble disagrees (mean per-dimension variance above
    variance_tau) or the safety classifier calls the state unsafe.

    members are anything with forward(x); mean and std come from their
    outputs. When nets is given the disagreement is measured on the raw
    network outputs instead, so variance_tau is in the networks' units
    (position steps in omega units for the dagger policies).
    """
    if len(members) < 2:
        raise InvalidConfigurationError("members", len(members), "an ensemble needs at least 2 members")
    outputs = np.stack([np.asarray(m.forward(x), dtype=float) for m in members])
    if nets is None:
        variance = outputs.var(axis=0)
        aggregate = float(variance.mean())
    else:
        variance, aggregate = ensemble_variance(nets, x)
    safe_prob = safe_probability(safety_net, x)
    unsafe = safe_prob is not None and safe_prob < safe_prob_threshold
    return EnsembleDecision(
        query=bool(aggregate > config.variance_tau or unsafe),
        variance=variance,
        aggregate_variance=aggregate,
        safe_prob=safe_prob,
        mean=outputs.mean(axis=0),
        std=outputs.std(axis=0),
    )


def interval_miscoverage(label, center, half_width) -> int:
    """1 when the label leaves center +/- half_width in any dimension"""
    y = np.asarray(label, dtype=float)
    return int(np.any(np.abs(y - np.asarray(center)) > np.asarray(half_width)))


class GateMode:
    AUTONOMOUS = "AUTONOMOUS"
    INTERVENTION = "INTERVENTION"


class LazyGate:
    """
    Two-state switch between autonomous and human-controlled execution.

    AUTONOMOUS -> INTERVENTION when the safety classifier flags the state.
    INTERVENTION -> AUTONOMOUS once the learner's action is within
    switch_back of the expert's. At most one transition per step.
    """

    def __init__(self, config: LazyGateConfig, safe_prob_threshold: float = 0.5, name: str = "lazy-gate"):
        self.name = name
        self.config = config
        self.safe_prob_threshold = safe_prob_threshold
        self.mode = GateMode.AUTONOMOUS
        self.interventions_started = 0
        self.interventions_ended = 0
        self.steps = 0
        self.last_transition_step: Optional[int] = None

    def advance(self, safe_prob: float, deviation: Optional[float] = None) -> str:
        """Mode this step runs in; self.mode afterwards is the mode of the next step"""
        self.steps += 1
        if self.mode == GateMode.AUTONOMOUS:
            if safe_prob < self.safe_prob_threshold:
                self._begin_intervention()
                return GateMode.INTERVENTION
            return GateMode.AUTONOMOUS

        if deviation is not None and deviation < self.config.switch_back:
            self._end_intervention()
        return GateMode.INTERVENTION

    def reset(self) -> None:
        self.mode = GateMode.AUTONOMOUS

    def _begin_intervention(self):
        self.mode = GateMode.INTERVENTION
        self.interventions_started += 1
        self._emit_state_change(GateMode.INTERVENTION)

    def _end_intervention(self):
        self.mode = GateMode.AUTONOMOUS
        self.interventions_ended += 1
        self._emit_state_change(GateMode.AUTONOMOUS)

    def _emit_state_change(self, new_mode: str):
        self.last_transition_step = self.steps
        logger.info("%s switched to %s at step %d", self.name, new_mode, self.steps)

    def get_metrics(self) -> Dict:
        return {
            "name": self.name,
            "mode": self.mode,
            "interventions_started": self.interventions_started,
            "interventions_ended": self.interventions_ended,
            "steps": self.steps,
            "last_transition_step": self.last_transition_step,
        }
