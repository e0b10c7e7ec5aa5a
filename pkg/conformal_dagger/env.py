"""
Simulated 4D goal-reaching task: move a held cup from a start position to the
expert's preferred goal, with the gripper closed throughout.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from .exceptions import InvalidConfigurationError
from .seeding import named_rng

logger = logging.getLogger(__name__)

HISTORY = 3
STATE_DIM = 4 * HISTORY
ACTION_DIM = 4
Vec3 = Tuple[float, float, float]


class Geometry(BaseModel):
    """Workspace layout: start pose, the two goals and the reach tolerances"""
    start: Vec3 = Field(default=(0.0, 0.0, 0.5))
    g0: Vec3 = Field(default=(0.5, 0.5, 0.1))
    g1: Vec3 = Field(default=(-0.5, 0.5, 0.1))
    env_shift_start: Vec3 = Field(default=(0.3, -0.3, 0.5))
    omega: float = Field(default=0.01, gt=0, description="Max expert step per coordinate")
    goal_tolerance: float = Field(default=0.02, gt=0)
    horizon: int = Field(default=100, ge=1, description="Max timesteps per task execution")

    @property
    def g1a(self) -> np.ndarray:
        return np.asarray(self.g0) + (np.asarray(self.g1) - np.asarray(self.g0)) / 3.0

    @property
    def g1b(self) -> np.ndarray:
        return np.asarray(self.g0) + 2.0 * (np.asarray(self.g1) - np.asarray(self.g0)) / 3.0


class ScenarioKind(str, Enum):
    STATIONARY = "stationary"
    SHIFT = "shift"
    DRIFT = "drift"
    ENV_SHIFT = "env_shift"


class Scenario(BaseModel):
    kind: ScenarioKind = Field(default=ScenarioKind.STATIONARY)
    shift_episode: int = Field(default=5, ge=0, description="Expert goal g0 -> g1")
    drift_episodes: Tuple[int, int, int] = Field(default=(5, 8, 11), description="g0 -> g1a -> g1b -> g1")

    @model_validator(mode="after")
    def _check_breakpoints(self):
        a, b, c = self.drift_episodes
        if not 0 <= a < b < c:
            raise ValueError(f"drift breakpoints must be strictly increasing, got {self.drift_episodes}")
        return self

    @property
    def breakpoints(self) -> List[int]:
        if self.kind == ScenarioKind.SHIFT:
            return [self.shift_episode]
        if self.kind == ScenarioKind.DRIFT:
            return list(self.drift_episodes)
        return []

    def validate_for(self, episodes: int) -> None:
        late = [b for b in self.breakpoints if b >= episodes]
        if late:
            raise InvalidConfigurationError(
                "scenario", self.kind.value,
                f"{self.kind.value} breakpoints {late} fall outside {episodes} deployment episodes",
            )


def scenario_goal(scenario: Scenario, episode: int, geometry: Optional[Geometry] = None) -> np.ndarray:
    """The expert's goal during deployment episode i"""
    geometry = geometry or Geometry()
    if episode < 0:
        raise InvalidConfigurationError("episode", episode, "episode index must be nonnegative")
    if scenario.kind == ScenarioKind.SHIFT:
        return np.asarray(geometry.g1 if episode >= scenario.shift_episode else geometry.g0, dtype=float)
    if scenario.kind == ScenarioKind.DRIFT:
        first, second, third = scenario.drift_episodes
        if episode >= third:
            return np.asarray(geometry.g1, dtype=float)
        if episode >= second:
            return geometry.g1b
        if episode >= first:
            return geometry.g1a
    return np.asarray(geometry.g0, dtype=float)


def scenario_start(scenario: Scenario, geometry: Optional[Geometry] = None) -> np.ndarray:
    geometry = geometry or Geometry()
    if scenario.kind == ScenarioKind.ENV_SHIFT:
        return np.asarray(geometry.env_shift_start, dtype=float)
    return np.asarray(geometry.start, dtype=float)


@dataclass
class EnvState:
    """Last three (xyz, gripper) tuples, oldest first"""
    history: np.ndarray
    goal: np.ndarray
    step_index: int = 0

    @property
    def x(self) -> np.ndarray:
        return self.history.ravel().copy()

    @property
    def position(self) -> np.ndarray:
        return self.history[-1, :3].copy()


def position_of(x: np.ndarray) -> np.ndarray:
    """Current xyz from a flattened state vector"""
    return np.asarray(x, dtype=float)[STATE_DIM - 4:STATE_DIM - 1]


class ExpertPolicy:
    """pos + omega * (g - pos) / max_d |g - pos|, clipped so the last step lands on g"""

    def __init__(self, goal: Sequence[float], omega: float = 0.01):
        self.goal = np.asarray(goal, dtype=float)
        self.omega = omega

    def step(self, position: np.ndarray) -> np.ndarray:
        diff = self.goal - position
        reach = float(np.max(np.abs(diff)))
        if reach == 0.0:
            return np.zeros(3)
        return diff * (min(self.omega, reach) / reach)

    def act(self, state: EnvState) -> np.ndarray:
        position = state.position
        return np.concatenate([position + self.step(position), [1.0]])


def expert_action(policy: ExpertPolicy, state: EnvState) -> np.ndarray:
    return policy.act(state)


class ReachEnv:
    def __init__(self, geometry: Optional[Geometry] = None):
        self.geometry = geometry or Geometry()
        self.state: Optional[EnvState] = None
        self.done = True
        self.success = False

    def reset(self, start: Sequence[float], goal: Sequence[float]) -> EnvState:
        row = np.concatenate([np.asarray(start, dtype=float), [1.0]])
        self.state = EnvState(history=np.tile(row, (HISTORY, 1)), goal=np.asarray(goal, dtype=float))
        self.done = False
        self.success = False
        return self.state

    def step(self, action: Sequence[float]) -> Tuple[EnvState, bool]:
        if self.state is None or self.done:
            return self.state, True
        a = np.asarray(action, dtype=float)
        # the cup stays held: the gripper coordinate of the state is always closed
        row = np.concatenate([a[:3], [1.0]])
        history = np.vstack([self.state.history[1:], row])
        self.state = EnvState(history=history, goal=self.state.goal, step_index=self.state.step_index + 1)
        self.success = bool(np.linalg.norm(self.state.position - self.state.goal) <= self.geometry.goal_tolerance)
        self.done = self.success or self.state.step_index >= self.geometry.horizon
        return self.state, self.done


class NoiseMode(str, Enum):
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"


class DemoNoise(BaseModel):
    mode: NoiseMode = Field(default=NoiseMode.MULTIPLICATIVE)
    mean: float = Field(default=1.0, description="Scale drawn per coordinate of the executed step")
    std: float = Field(default=0.5, ge=0)


@dataclass
class Demonstrations:
    inputs: np.ndarray
    actions: np.ndarray
    trajectories: List[np.ndarray] = field(default_factory=list)

    def pairs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.inputs, self.actions))

    def __len__(self) -> int:
        return self.inputs.shape[0]


def collect_demos(
    n: int,
    expert: ExpertPolicy,
    noise: Optional[DemoNoise] = None,
    seed: int = 0,
    geometry: Optional[Geometry] = None,
    start: Optional[Sequence[float]] = None,
) -> Demonstrations:
    """
    n seeded expert rollouts with injected execution noise.

    Labels are the expert's clean actions; the executed step is perturbed
    (multiplicative: step * N(mean, std) per coordinate; additive:
    step + omega * N(0, std)) so demonstrations cover off-path states.
    """
    if n < 1:
        raise InvalidConfigurationError("n", n, "need at least one demonstration")
    noise = noise or DemoNoise()
    geometry = geometry or Geometry()
    start = geometry.start if start is None else start
    rng = named_rng(seed, "demo_noise")
    env = ReachEnv(geometry)
    inputs, actions, trajectories = [], [], []
    for _ in range(n):
        state = env.reset(start, expert.goal)
        positions = [state.position]
        done = False
        while not done:
            label = expert.act(state)
            step = label[:3] - state.position
            if noise.mode == NoiseMode.MULTIPLICATIVE:
                executed_step = step * rng.normal(noise.mean, noise.std, size=3)
            else:
                executed_step = step + expert.omega * rng.normal(0.0, noise.std, size=3)
            inputs.append(state.x)
            actions.append(label)
            state, done = env.step(np.concatenate([state.position + executed_step, [1.0]]))
            positions.append(state.position)
        trajectories.append(np.asarray(positions))
    logger.debug("collected %d demos, %d pairs", n, len(inputs))
    return Demonstrations(np.asarray(inputs), np.asarray(actions), trajectories)


TRACE_COLUMNS = ["t"] + [f"x{i}" for i in range(1, STATE_DIM + 1)] + [f"a{i}" for i in range(1, ACTION_DIM + 1)] + ["src"]


def trace_frame(inputs: Sequence[np.ndarray], actions: Sequence[np.ndarray], sources: Sequence[str]) -> pd.DataFrame:
    """t, x1..x12, a1..a4, src rows for one execution"""
    rows = [
        [t] + list(np.asarray(x, dtype=float)) + list(np.asarray(a, dtype=float)) + [src]
        for t, (x, a, src) in enumerate(zip(inputs, actions, sources))
    ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def write_trace_csv(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")
