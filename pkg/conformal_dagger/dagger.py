"""
Interactive imitation learning on the reaching task.

ConformalDAgger calibrates a per-dimension interval around the learner's
action with intermittent quantile tracking and asks for help when the
interval grows wide. EnsembleDAgger, SafeDAgger and LazyDAgger are the
baselines, all driven by the same deployment loop.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .conformal import (
    BoundReport,
    ObservationEvent,
    ScheduleConfig,
    ScheduleKind,
    VectorIntervalTracker,
    coverage_bound,
    effective_score_bound,
    interval,
    iqt_step_vector,
    score_signed_residual,
    vector_miscoverage,
)
from .env import (
    ACTION_DIM,
    STATE_DIM,
    DemoNoise,
    EnvState,
    ExpertPolicy,
    Geometry,
    ReachEnv,
    Scenario,
    collect_demos,
    position_of,
    scenario_goal,
    scenario_start,
    trace_frame,
)
from .exceptions import UnknownMethodError
from .gating import (
    BaselineConfig,
    GateConfig,
    GateMode,
    LazyGate,
    compose_obs_probability,
    ensemble_gate,
    interval_miscoverage,
    robot_gate_probability,
    safe_probability,
)
from .learner import (
    CLASSIFIER_HIDDEN,
    POLICY_HIDDEN,
    Head,
    Mlp,
    OptimizerKind,
    ReplayBuffer,
    TrainConfig,
    train,
)
from .seeding import derive_seed, named_rng

logger = logging.getLogger(__name__)

GRIPPER_THRESHOLD = 0.5


class Method(str, Enum):
    CONFORMAL = "conformal"
    ENSEMBLE = "ensemble"
    SAFE = "safe"
    LAZY = "lazy"


VALID_METHODS = [m.value for m in Method]


def parse_method(name: str) -> Method:
    try:
        return Method(name)
    except ValueError:
        raise UnknownMethodError(str(name), VALID_METHODS) from None


class PolicyConfig(BaseModel):
    hidden: List[int] = Field(default_factory=lambda: list(POLICY_HIDDEN))
    classifier_hidden: List[int] = Field(default_factory=lambda: list(CLASSIFIER_HIDDEN))
    n_demos: int = Field(default=10, ge=1)
    demo_noise: DemoNoise = Field(default_factory=DemoNoise)
    buffer_capacity: int = Field(default=300, ge=1)
    # Adam here; TrainConfig's own default stays SGD. 200 plain-SGD steps at lr 1e-3 underfit the 7-layer net
    initial_train: TrainConfig = Field(
        default_factory=lambda: TrainConfig(iterations=200, optimizer=OptimizerKind.ADAM)
    )
    finetune: TrainConfig = Field(
        default_factory=lambda: TrainConfig(iterations=100, optimizer=OptimizerKind.ADAM)
    )


class DaggerConfig(BaseModel):
    """One (method, scenario, seed) run"""
    method: Method = Field(default=Method.CONFORMAL)
    scenario: Scenario = Field(default_factory=Scenario)
    episodes: int = Field(default=15, ge=0, description="Deployment episodes M")
    executions: int = Field(default=2, ge=1, description="Task executions per deployment episode")
    seed: int = Field(default=0)
    gate: GateConfig = Field(default_factory=GateConfig)
    baselines: BaselineConfig = Field(default_factory=BaselineConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    geometry: Geometry = Field(default_factory=Geometry)
    label: str = Field(default="", description="Sweep point, empty outside sweeps")

    @property
    def run_key(self) -> Tuple[str, str, int, str]:
        return (self.method.value, self.scenario.kind.value, self.seed, self.label)

    @property
    def run_name(self) -> str:
        name = f"{self.method.value}_{self.scenario.kind.value}_seed{self.seed}"
        return f"{name}_{self.label}" if self.label else name


class LearnerPolicy:
    """
    Wraps a network that outputs the position step in units of omega plus the
    gripper command; actions are absolute (xyz, gripper) like the expert's.
    The gripper is a binary open/closed command: the raw output is
    thresholded at GRIPPER_THRESHOLD.
    """

    def __init__(self, net: Mlp, omega: float):
        self.net = net
        self.omega = omega

    @classmethod
    def build(cls, hidden: Sequence[int], seed: int, omega: float) -> "LearnerPolicy":
        return cls(Mlp([STATE_DIM] + list(hidden) + [ACTION_DIM], Head.LINEAR, seed=seed), omega)

    def forward(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        batch = np.atleast_2d(arr)
        out = np.atleast_2d(self.net.forward(batch))
        gripper = (out[:, 3:] >= GRIPPER_THRESHOLD).astype(float)
        actions = np.column_stack([batch[:, STATE_DIM - 4:STATE_DIM - 1] + self.omega * out[:, :3], gripper])
        return actions[0] if arr.ndim == 1 else actions

    def act(self, state: EnvState) -> np.ndarray:
        return self.forward(state.x)

    def targets(self, inputs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        positions = inputs[:, STATE_DIM - 4:STATE_DIM - 1]
        return np.column_stack([(actions[:, :3] - positions) / self.omega, actions[:, 3:]])

    def fit(self, inputs: np.ndarray, actions: np.ndarray, config: TrainConfig) -> "LearnerPolicy":
        train(self.net, (inputs, self.targets(inputs, actions)), config)
        return self


class EnsemblePolicy:
    def __init__(self, members: List[LearnerPolicy]):
        self.members = members

    def forward(self, x) -> np.ndarray:
        return np.mean([m.forward(x) for m in self.members], axis=0)

    def act(self, state: EnvState) -> np.ndarray:
        return self.forward(state.x)


@dataclass
class Proposal:
    action: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    width: float
    p_robot: float = 0.0
    safe_prob: Optional[float] = None


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    robot_action: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    width: float
    p_robot: float
    p_human: float
    p_obs: float
    query: bool
    intervention: bool
    observed_action: Optional[np.ndarray]
    oracle_action: np.ndarray
    executed_action: np.ndarray
    err: float
    err_lo: Optional[np.ndarray] = None
    err_hi: Optional[np.ndarray] = None
    score_lo: Optional[np.ndarray] = None
    score_hi: Optional[np.ndarray] = None

    @property
    def observed(self) -> bool:
        return self.observed_action is not None

    @property
    def source(self) -> str:
        return "human" if self.observed else "robot"


def _cols(prefix: str, n: int) -> List[str]:
    return [f"{prefix}{i}" for i in range(1, n + 1)]


@dataclass
class EpisodeLog:
    """Per-timestep record of one task execution"""
    method: str
    episode: int = 0
    execution: int = 0
    records: List[StepRecord] = field(default_factory=list)
    success: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def intervention_pct(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.observed for r in self.records) / len(self.records)

    @property
    def query_pct(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.query for r in self.records) / len(self.records)

    @property
    def human_pct(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.intervention for r in self.records) / len(self.records)

    @property
    def miscoverage(self) -> float:
        if not self.records:
            return math.nan
        return float(np.mean([r.err for r in self.records]))

    def observed_pairs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(r.x, r.observed_action) for r in self.records if r.observed]

    def positions(self) -> np.ndarray:
        """Visited positions including the one reached by the final action"""
        if not self.records:
            return np.empty((0, 3))
        visited = [position_of(r.x) for r in self.records]
        visited.append(self.records[-1].executed_action[:3])
        return np.asarray(visited)

    def trace(self) -> pd.DataFrame:
        return trace_frame(
            [r.x for r in self.records], [r.executed_action for r in self.records], [r.source for r in self.records]
        )

    def to_frame(self) -> pd.DataFrame:
        """Full per-step table; the t, x*, a*, src columns are the execution trace"""
        nan4 = [math.nan] * ACTION_DIM
        rows = []
        for r in self.records:
            rows.append(
                [self.episode, self.execution, r.t]
                + list(r.x)
                + list(r.executed_action)
                + list(r.robot_action)
                + list(r.oracle_action)
                + (list(r.observed_action) if r.observed else nan4)
                + list(r.lower)
                + list(r.upper)
                + [r.width, r.p_robot, r.p_human, r.p_obs, int(r.query), int(r.intervention), int(r.observed),
                   r.err, r.source]
            )
        columns = (
            ["episode", "execution", "t"]
            + _cols("x", STATE_DIM)
            + _cols("a", ACTION_DIM)
            + _cols("ar", ACTION_DIM)
            + _cols("oracle", ACTION_DIM)
            + _cols("ah", ACTION_DIM)
            + _cols("lower", ACTION_DIM)
            + _cols("upper", ACTION_DIM)
            + ["width", "p_robot", "p_human", "p_obs", "query", "intervention", "observed", "err", "src"]
        )
        return pd.DataFrame(rows, columns=columns)


@dataclass
class GateStreams:
    """Independent Bernoulli streams: robot gate drawn first, then human gate"""
    robot: np.random.Generator
    human: np.random.Generator

    @classmethod
    def for_seed(cls, seed: int) -> "GateStreams":
        return cls(robot=named_rng(seed, "robot_gate"), human=named_rng(seed, "human_gate"))


def _safety_labels(actor, inputs: np.ndarray, actions: np.ndarray, s: float) -> np.ndarray:
    """1 (safe) where the actor's action is within s of the expert label"""
    deviation = np.linalg.norm(actor.forward(inputs) - actions, axis=1)
    return (deviation <= s).astype(float)


class InteractiveLearner:
    """Policy plus the robot-side gate of one interactive method"""

    method: Method

    def __init__(self, config: DaggerConfig):
        self.config = config
        omega = config.geometry.omega
        self.policy = LearnerPolicy.build(config.policy.hidden, derive_seed(config.seed, "init", "policy"), omega)

    @property
    def actor(self):
        return self.policy

    def begin_episode(self) -> None:
        pass

    def propose(self, x: np.ndarray) -> Proposal:
        raise NotImplementedError

    def gate(self, proposal: Proposal, rng: np.random.Generator) -> bool:
        raise NotImplementedError

    def oracle_errors(self, proposal: Proposal, oracle: np.ndarray):
        return math.nan, None, None, None, None

    def after_step(self, proposal: Proposal, observed_action: Optional[np.ndarray], p_obs: float) -> None:
        pass

    def fit(self, inputs: np.ndarray, actions: np.ndarray, config: TrainConfig) -> float:
        """Retrain on (inputs, actions); returns the last policy loss"""
        self.policy.fit(inputs, actions, config)
        return self.policy.net.loss_history[-1] if self.policy.net.loss_history else math.nan


class ConformalLearner(InteractiveLearner):
    method = Method.CONFORMAL

    def __init__(self, config: DaggerConfig):
        super().__init__(config)
        c = config.gate.conformal
        schedule = ScheduleConfig(
            kind=ScheduleKind.LOOKBACK,
            lr=c.lr,
            lookback_k=c.lookback_k,
            initial_bound=c.initial_bound,
            p_dependent=c.p_dependent,
        )
        self.tracker = VectorIntervalTracker(
            ACTION_DIM, c.alpha, schedule, q0_lo=c.q0, q0_hi=c.q0, bound_B=max(1.0, c.q0)
        )
        self.episode_mark = 0
        self.skipped_updates = 0

    def begin_episode(self) -> None:
        q0 = self.config.gate.conformal.q0
        self.tracker.reset(q0, q0)
        self.episode_mark = self.tracker.lo[0].step_count
        self.skipped_updates = 0

    def propose(self, x: np.ndarray) -> Proposal:
        action = self.policy.forward(x)
        lower, upper = interval(action, self.tracker)
        width = self.tracker.width()
        return Proposal(action, lower, upper, width, robot_gate_probability(width, self.config.gate.robot_gate))

    def gate(self, proposal: Proposal, rng: np.random.Generator) -> bool:
        return bool(rng.random() < proposal.p_robot)

    def oracle_errors(self, proposal: Proposal, oracle: np.ndarray):
        s_lo, s_hi = score_signed_residual(proposal.action, oracle)
        err_lo = (s_lo > self.tracker.q_lo).astype(int)
        err_hi = (s_hi > self.tracker.q_hi).astype(int)
        return float(vector_miscoverage(oracle, proposal.lower, proposal.upper)), err_lo, err_hi, s_lo, s_hi

    def after_step(self, proposal: Proposal, observed_action: Optional[np.ndarray], p_obs: float) -> None:
        if p_obs <= 0.0:
            # neither gate can fire; there is no observation model to update under
            self.skipped_updates += 1
            return
        if observed_action is None:
            iqt_step_vector(self.tracker, ObservationEvent.hidden(p_obs))
            return
        s_lo, s_hi = score_signed_residual(proposal.action, observed_action)
        iqt_step_vector(self.tracker, ObservationEvent.vector(p_obs, s_lo, s_hi))


class _ClassifierLearner(InteractiveLearner):
    """Shared safety-classifier machinery of the three baselines"""

    safety_s: float = 0.03

    def __init__(self, config: DaggerConfig):
        super().__init__(config)
        sizes = [STATE_DIM] + list(config.policy.classifier_hidden) + [1]
        self.classifier = Mlp(sizes, Head.LOGISTIC, seed=derive_seed(config.seed, "init", "classifier"))
        self.threshold = config.baselines.safe_prob_threshold

    def fit(self, inputs: np.ndarray, actions: np.ndarray, config: TrainConfig) -> float:
        loss = super().fit(inputs, actions, config)
        labels = _safety_labels(self.actor, inputs, actions, self.safety_s)
        train(self.classifier, (inputs, labels), config.model_copy(update={"seed": derive_seed(config.seed, "cls")}))
        return loss


class EnsembleLearner(_ClassifierLearner):
    method = Method.ENSEMBLE

    def __init__(self, config: DaggerConfig):
        super().__init__(config)
        e = config.baselines.ensemble
        self.safety_s = e.safety_s
        omega = config.geometry.omega
        self.members = [self.policy] + [
            LearnerPolicy.build(config.policy.hidden, derive_seed(config.seed, "ensemble", k), omega)
            for k in range(1, e.members)
        ]
        self.ensemble = EnsemblePolicy(self.members)

    @property
    def actor(self):
        return self.ensemble

    def propose(self, x: np.ndarray) -> Proposal:
        decision = ensemble_gate(
            self.members, x, self.classifier, self.config.baselines.ensemble, self.threshold,
            nets=[m.net for m in self.members],
        )
        half = self.config.baselines.interval_sigmas * decision.std
        lower, upper = decision.mean - half, decision.mean + half
        width = float(np.linalg.norm(upper - lower))
        return Proposal(decision.mean, lower, upper, width, 1.0 if decision.query else 0.0, decision.safe_prob)

    def gate(self, proposal: Proposal, rng: np.random.Generator) -> bool:
        return proposal.p_robot == 1.0

    def oracle_errors(self, proposal: Proposal, oracle: np.ndarray):
        center = (proposal.lower + proposal.upper) / 2.0
        half = (proposal.upper - proposal.lower) / 2.0
        return float(interval_miscoverage(oracle, center, half)), None, None, None, None

    def fit(self, inputs: np.ndarray, actions: np.ndarray, config: TrainConfig) -> float:
        for k, member in enumerate(self.members[1:], start=1):
            member.fit(inputs, actions, config.model_copy(update={"seed": derive_seed(config.seed, "ensemble", k)}))
        return super().fit(inputs, actions, config)


def _no_interval() -> Tuple[np.ndarray, np.ndarray]:
    nan = np.full(ACTION_DIM, math.nan)
    return nan, nan.copy()


class SafeLearner(_ClassifierLearner):
    method = Method.SAFE

    def __init__(self, config: DaggerConfig):
        super().__init__(config)
        self.safety_s = config.baselines.safedagger.safety_s

    def propose(self, x: np.ndarray) -> Proposal:
        action = self.policy.forward(x)
        lower, upper = _no_interval()
        safe_prob = safe_probability(self.classifier, x)
        return Proposal(action, lower, upper, math.nan, 1.0 if safe_prob < self.threshold else 0.0, safe_prob)

    def gate(self, proposal: Proposal, rng: np.random.Generator) -> bool:
        return proposal.p_robot == 1.0


class LazyLearner(_ClassifierLearner):
    method = Method.LAZY

    def __init__(self, config: DaggerConfig):
        super().__init__(config)
        lazy = config.baselines.lazydagger
        self.safety_s = lazy.safety_s
        self.switch = LazyGate(lazy, self.threshold, name=f"lazy-gate-seed{config.seed}")
        self._awaiting_deviation = False

    def begin_episode(self) -> None:
        self.switch.reset()

    def propose(self, x: np.ndarray) -> Proposal:
        action = self.policy.forward(x)
        lower, upper = _no_interval()
        return Proposal(action, lower, upper, math.nan, safe_prob=safe_probability(self.classifier, x))

    def gate(self, proposal: Proposal, rng: np.random.Generator) -> bool:
        if self.switch.mode == GateMode.AUTONOMOUS:
            self._awaiting_deviation = False
            query = self.switch.advance(proposal.safe_prob) == GateMode.INTERVENTION
        else:
            # the human keeps control; the switch back is decided once a^h is seen
            self._awaiting_deviation = True
            query = True
        proposal.p_robot = 1.0 if query else 0.0
        return query

    def after_step(self, proposal: Proposal, observed_action: Optional[np.ndarray], p_obs: float) -> None:
        if self._awaiting_deviation and observed_action is not None:
            self.switch.advance(proposal.safe_prob, float(np.linalg.norm(proposal.action - observed_action)))
        self._awaiting_deviation = False


LEARNERS = {
    Method.CONFORMAL: ConformalLearner,
    Method.ENSEMBLE: EnsembleLearner,
    Method.SAFE: SafeLearner,
    Method.LAZY: LazyLearner,
}


def build_learner(config: DaggerConfig) -> InteractiveLearner:
    return LEARNERS[parse_method(config.method)](config)


def run_deployment_episode(
    learner: InteractiveLearner,
    expert: ExpertPolicy,
    env: ReachEnv,
    gate: GateConfig,
    streams: GateStreams,
    start: Sequence[float],
    episode: int = 0,
    execution: int = 0,
) -> EpisodeLog:
    """
    One interactive task execution.

    Each step: predict a^r, build the interval, draw the robot gate then the
    human gate. If either fires the expert's action is observed and
    executed; otherwise a^r is executed. The learner's tracker is updated
    with the composed observation probability. Oracle errors are logged for
    metrics only.
    """
    log = EpisodeLog(method=learner.method.value, episode=episode, execution=execution)
    state = env.reset(start, expert.goal)
    done = False
    while not done:
        x = state.x
        proposal = learner.propose(x)
        query = learner.gate(proposal, streams.robot)
        intervention = bool(streams.human.random() < gate.human_p)
        oracle = expert.act(state)
        observed = query or intervention
        p_obs = compose_obs_probability(gate.human_p, proposal.p_robot)
        err, err_lo, err_hi, s_lo, s_hi = learner.oracle_errors(proposal, oracle)
        observed_action = oracle if observed else None
        learner.after_step(proposal, observed_action, p_obs)
        executed = oracle if observed else proposal.action
        log.records.append(StepRecord(
            t=state.step_index,
            x=x,
            robot_action=proposal.action,
            lower=proposal.lower,
            upper=proposal.upper,
            width=proposal.width,
            p_robot=proposal.p_robot,
            p_human=gate.human_p,
            p_obs=p_obs,
            query=query,
            intervention=intervention,
            observed_action=observed_action,
            oracle_action=oracle,
            executed_action=executed,
            err=err,
            err_lo=err_lo,
            err_hi=err_hi,
            score_lo=s_lo,
            score_hi=s_hi,
        ))
        logger.debug("ep %d.%d t=%d u=%.4f p_r=%.3f query=%s human=%s",
                     episode, execution, state.step_index, proposal.width, proposal.p_robot, query, intervention)
        state, done = env.step(executed)
    log.success = env.success
    return log


def rollout(actor, expert: ExpertPolicy, env: ReachEnv, start: Sequence[float]) -> EpisodeLog:
    """The actor drives alone; the expert's action at every visited state is logged as the oracle"""
    log = EpisodeLog(method="rollout")
    state = env.reset(start, expert.goal)
    done = False
    nan = np.full(ACTION_DIM, math.nan)
    while not done:
        action = np.asarray(actor.act(state), dtype=float)
        log.records.append(StepRecord(
            t=state.step_index, x=state.x, robot_action=action, lower=nan, upper=nan, width=math.nan,
            p_robot=0.0, p_human=0.0, p_obs=0.0, query=False, intervention=False, observed_action=None,
            oracle_action=expert.act(state), executed_action=action, err=math.nan,
        ))
        state, done = env.step(action)
    log.success = env.success
    return log


def decision_deviation_from_log(log: EpisodeLog) -> float:
    if not log.records:
        return 0.0
    return float(np.mean([np.linalg.norm(r.robot_action - r.oracle_action) for r in log.records]))


def decision_deviation(policy, expert: ExpertPolicy, env: ReachEnv, start: Sequence[float]) -> float:
    """Mean ||a^r - a^h||_2 over the states the learner visits on its own"""
    return decision_deviation_from_log(rollout(policy, expert, env, start))


def trajectory_distance(positions_a: np.ndarray, positions_b: np.ndarray) -> float:
    """Mean per-step L2 distance; the shorter trace holds its final position"""
    a, b = np.asarray(positions_a, dtype=float), np.asarray(positions_b, dtype=float)
    n = max(len(a), len(b))
    if n == 0:
        return 0.0
    a = np.vstack([a, np.repeat(a[-1:], n - len(a), axis=0)])
    b = np.vstack([b, np.repeat(b[-1:], n - len(b), axis=0)])
    return float(np.linalg.norm(a - b, axis=1).mean())


def trajectory_deviation(policy_a, policy_b, env: ReachEnv, start: Sequence[float], goal: Sequence[float]) -> float:
    """Both act independently from the same start; symmetric in its two policies"""
    reference = ExpertPolicy(goal, env.geometry.omega)
    positions_a = rollout(policy_a, reference, env, start).positions()
    positions_b = rollout(policy_b, reference, env, start).positions()
    return trajectory_distance(positions_a, positions_b)


def episode_bound_reports(tracker: VectorIntervalTracker, logs: Sequence[EpisodeLog], mark: int) -> List[BoundReport]:
    """Per (dimension, side) realized coverage gap against the coverage bound for this episode"""
    records = [r for log in logs for r in log.records]
    reports = []
    for side, d, scalar in tracker.trackers:
        gammas, ps = scalar.gammas[mark:], scalar.ps[mark:]
        if len(gammas) != len(records) or not records:
            return []
        errs = np.array([(r.err_lo if side == "lo" else r.err_hi)[d] for r in records], dtype=float)
        scores = np.array([(r.score_lo if side == "lo" else r.score_hi)[d] for r in records], dtype=float)
        B, _ = effective_score_bound(scores, scalar.initial_q)
        miscoverage = float(errs.mean())
        reports.append(BoundReport(
            T=len(records),
            miscoverage=miscoverage,
            gap=abs(miscoverage - scalar.alpha),
            bound=coverage_bound(len(records), B, gammas, ps),
        ))
    return reports


@dataclass
class EpisodeMetrics:
    episode: int
    intervention_pct: float
    miscoverage: float
    decision_dev: float
    trajectory_dev: float
    query_pct: float = 0.0
    human_pct: float = 0.0
    steps: int = 0
    success_rate: float = 0.0
    bound_holds: Optional[bool] = None


def _mean_or_nan(values: Sequence[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


@dataclass
class RunMetrics:
    method: str
    scenario: str
    seed: int
    initial_decision_dev: float
    initial_trajectory_dev: float
    episodes: List[EpisodeMetrics] = field(default_factory=list)
    label: str = ""

    @property
    def miscoverage_rate(self) -> float:
        return _mean_or_nan([e.miscoverage for e in self.episodes])

    @property
    def intervention_pct(self) -> float:
        if not self.episodes:
            return 0.0
        return float(np.mean([e.intervention_pct for e in self.episodes]))

    @property
    def decision_deviation(self) -> float:
        return self.episodes[-1].decision_dev if self.episodes else self.initial_decision_dev

    @property
    def trajectory_deviation(self) -> float:
        return self.episodes[-1].trajectory_dev if self.episodes else self.initial_trajectory_dev

    def traces(self) -> Dict[str, List[float]]:
        return {
            "intervention_pct": [e.intervention_pct for e in self.episodes],
            "miscoverage": [e.miscoverage for e in self.episodes],
            "decision_dev": [e.decision_dev for e in self.episodes],
            "trajectory_dev": [e.trajectory_dev for e in self.episodes],
        }

    def rows(self) -> List[Dict]:
        return [
            {
                "episode": e.episode,
                "method": self.method,
                "scenario": self.scenario,
                "seed": self.seed,
                "intervention_pct": e.intervention_pct,
                "miscoverage": e.miscoverage,
                "decision_dev": e.decision_dev,
                "trajectory_dev": e.trajectory_dev,
            }
            for e in self.episodes
        ]


@dataclass
class RunResult:
    config: DaggerConfig
    metrics: RunMetrics
    logs: List[EpisodeLog] = field(default_factory=list)
    retrain_seconds: List[float] = field(default_factory=list, compare=False)
    final_rollouts: Tuple[Optional[EpisodeLog], Optional[EpisodeLog]] = (None, None)


def _train_config(base: TrainConfig, seed: int, *names) -> TrainConfig:
    return base.model_copy(update={"seed": derive_seed(seed, *names)})


def run_full_experiment(config: DaggerConfig) -> RunResult:
    """
    Train on noisy demonstrations, then run M deployment episodes of
    `executions` task executions each, aggregating observed (x, a^h) pairs
    into the replay buffer and fine-tuning after every episode.
    """
    if config.episodes:
        config.scenario.validate_for(config.episodes)
    geometry = config.geometry
    env = ReachEnv(geometry)
    streams = GateStreams.for_seed(config.seed)
    learner = build_learner(config)
    start = scenario_start(config.scenario, geometry)

    demo_expert = ExpertPolicy(scenario_goal(config.scenario, 0, geometry), geometry.omega)
    demos = collect_demos(
        config.policy.n_demos, demo_expert, config.policy.demo_noise,
        seed=derive_seed(config.seed, "demos"), geometry=geometry,
    )
    buffer = ReplayBuffer(config.policy.buffer_capacity)
    buffer.extend(demos.pairs())
    learner.fit(demos.inputs, demos.actions, _train_config(config.policy.initial_train, config.seed, "train", "initial"))

    initial_expert = ExpertPolicy(scenario_goal(config.scenario, 0, geometry), geometry.omega)
    metrics = RunMetrics(
        method=config.method.value,
        scenario=config.scenario.kind.value,
        seed=config.seed,
        initial_decision_dev=decision_deviation(learner.actor, initial_expert, env, start),
        initial_trajectory_dev=trajectory_deviation(learner.actor, initial_expert, env, start, initial_expert.goal),
        label=config.label,
    )
    result = RunResult(config=config, metrics=metrics)
    logger.info("run %s: initial decision_dev=%.4f trajectory_dev=%.4f",
                config.run_name, metrics.initial_decision_dev, metrics.initial_trajectory_dev)

    for episode in range(config.episodes):
        expert = ExpertPolicy(scenario_goal(config.scenario, episode, geometry), geometry.omega)
        learner.begin_episode()
        mark = learner.tracker.lo[0].step_count if isinstance(learner, ConformalLearner) else 0
        logs = [
            run_deployment_episode(learner, expert, env, config.gate, streams, start, episode, execution)
            for execution in range(config.executions)
        ]
        bound_holds = None
        if isinstance(learner, ConformalLearner):
            reports = episode_bound_reports(learner.tracker, logs, mark)
            bound_holds = all(r.holds for r in reports) if reports else None

        for log in logs:
            buffer.extend(log.observed_pairs())
        inputs, actions = buffer.as_arrays()
        started = time.perf_counter()
        loss = learner.fit(inputs, actions, _train_config(config.policy.finetune, config.seed, "train", episode))
        result.retrain_seconds.append(time.perf_counter() - started)

        episode_metrics = EpisodeMetrics(
            episode=episode,
            intervention_pct=float(np.mean([log.intervention_pct for log in logs])),
            miscoverage=_mean_or_nan([log.miscoverage for log in logs]),
            decision_dev=decision_deviation(learner.actor, expert, env, start),
            trajectory_dev=trajectory_deviation(learner.actor, expert, env, start, expert.goal),
            query_pct=float(np.mean([log.query_pct for log in logs])),
            human_pct=float(np.mean([log.human_pct for log in logs])),
            steps=sum(len(log) for log in logs),
            success_rate=float(np.mean([log.success for log in logs])),
            bound_holds=bound_holds,
        )
        metrics.episodes.append(episode_metrics)
        result.logs.extend(logs)
        logger.info(
            "run %s episode %d: intervention=%.3f miscoverage=%.3f decision_dev=%.4f trajectory_dev=%.4f loss=%.3e",
            config.run_name, episode, episode_metrics.intervention_pct, episode_metrics.miscoverage,
            episode_metrics.decision_dev, episode_metrics.trajectory_dev, loss,
        )

    final_goal = scenario_goal(config.scenario, max(config.episodes - 1, 0), geometry)
    final_expert = ExpertPolicy(final_goal, geometry.omega)
    result.final_rollouts = (
        rollout(learner.actor, final_expert, env, start),
        rollout(final_expert, final_expert, env, start),
    )
    return result
