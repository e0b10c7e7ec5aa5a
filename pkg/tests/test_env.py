import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from conformal_dagger.env import (
    ACTION_DIM,
    STATE_DIM,
    TRACE_COLUMNS,
    DemoNoise,
    ExpertPolicy,
    Geometry,
    NoiseMode,
    ReachEnv,
    Scenario,
    ScenarioKind,
    collect_demos,
    expert_action,
    position_of,
    scenario_goal,
    scenario_start,
    trace_frame,
    write_trace_csv,
)
from conformal_dagger.exceptions import InvalidConfigurationError


@pytest.fixture
def geometry():
    return Geometry()


@pytest.fixture
def env(geometry):
    return ReachEnv(geometry)


class TestExpert:
    """Expert step rule"""

    def test_step_scaled_by_largest_coordinate(self):
        expert = ExpertPolicy([1.0, 0.5, 0.25], omega=0.01)
        np.testing.assert_allclose(expert.step(np.zeros(3)), [0.01, 0.005, 0.0025])

    def test_at_goal_does_not_move(self):
        expert = ExpertPolicy([0.2, 0.3, 0.4])
        np.testing.assert_array_equal(expert.step(np.array([0.2, 0.3, 0.4])), [0.0, 0.0, 0.0])

    def test_last_step_lands_on_goal(self):
        expert = ExpertPolicy([1.0, 0.0, 0.0], omega=0.01)
        position = np.array([0.99, 0.0, 0.0])
        np.testing.assert_allclose(position + expert.step(position), [1.0, 0.0, 0.0])

    def test_no_overshoot_near_goal(self):
        expert = ExpertPolicy([1.0, 0.0, 0.0], omega=0.01)
        position = np.array([0.995, 0.0, 0.0])
        np.testing.assert_allclose(position + expert.step(position), [1.0, 0.0, 0.0])

    def test_action_is_absolute_with_closed_gripper(self, env, geometry):
        state = env.reset(geometry.start, geometry.g0)
        action = expert_action(ExpertPolicy(geometry.g0), state)
        assert action.shape == (ACTION_DIM,)
        assert action[3] == 1.0
        np.testing.assert_allclose(action[:3], [0.01, 0.01, 0.492])


class TestReachEnv:
    """Environment stepping"""

    def test_reset_state(self, env, geometry):
        state = env.reset(geometry.start, geometry.g0)
        assert state.x.shape == (STATE_DIM,)
        np.testing.assert_array_equal(state.x, np.tile(list(geometry.start) + [1.0], 3))
        np.testing.assert_array_equal(position_of(state.x), geometry.start)

    def test_history_shifts(self, env, geometry):
        env.reset(geometry.start, geometry.g0)
        state, _ = env.step([0.1, 0.2, 0.3, 0.0])
        np.testing.assert_array_equal(state.history[-1], [0.1, 0.2, 0.3, 1.0])
        np.testing.assert_array_equal(state.history[0], list(geometry.start) + [1.0])
        assert state.step_index == 1

    def test_reaching_goal_ends_episode(self, env, geometry):
        env.reset(geometry.start, geometry.g0)
        _, done = env.step(list(geometry.g0) + [1.0])
        assert done
        assert env.success

    def test_horizon(self, env, geometry):
        env.reset(geometry.start, geometry.g0)
        done = False
        steps = 0
        while not done:
            _, done = env.step(list(geometry.start) + [1.0])
            steps += 1
        assert steps == geometry.horizon
        assert not env.success

    def test_step_after_done(self, env, geometry):
        env.reset(geometry.start, geometry.g0)
        state, _ = env.step(list(geometry.g0) + [1.0])
        again, done = env.step([9.0, 9.0, 9.0, 1.0])
        assert done
        assert again is state

    @pytest.mark.parametrize("goal", ["g0", "g1"])
    def test_expert_reaches_goal(self, env, geometry, goal):
        target = getattr(geometry, goal)
        expert = ExpertPolicy(target, geometry.omega)
        state = env.reset(geometry.start, target)
        done = False
        while not done:
            state, done = env.step(expert.act(state))
        assert env.success
        assert state.step_index <= geometry.horizon

    def test_expert_reaches_from_shifted_start(self, env, geometry):
        expert = ExpertPolicy(geometry.g0, geometry.omega)
        state = env.reset(geometry.env_shift_start, geometry.g0)
        done = False
        while not done:
            state, done = env.step(expert.act(state))
        assert env.success


class TestScenarios:
    """Expert goal schedules"""

    @pytest.mark.parametrize("episode", [0, 5, 14])
    def test_stationary(self, geometry, episode):
        np.testing.assert_array_equal(scenario_goal(Scenario(kind=ScenarioKind.STATIONARY), episode), geometry.g0)

    def test_shift(self, geometry):
        scenario = Scenario(kind=ScenarioKind.SHIFT)
        np.testing.assert_array_equal(scenario_goal(scenario, 4), geometry.g0)
        np.testing.assert_array_equal(scenario_goal(scenario, 5), geometry.g1)

    @pytest.mark.parametrize("episode,expected", [(4, "g0"), (5, "g1a"), (9, "g1b"), (11, "g1")])
    def test_drift(self, geometry, episode, expected):
        goal = scenario_goal(Scenario(kind=ScenarioKind.DRIFT), episode)
        np.testing.assert_allclose(goal, np.asarray(getattr(geometry, expected)))

    def test_drift_intermediates(self, geometry):
        np.testing.assert_allclose(geometry.g1a, [0.5 - 1.0 / 3.0, 0.5, 0.1])
        np.testing.assert_allclose(geometry.g1b, [0.5 - 2.0 / 3.0, 0.5, 0.1])

    def test_env_shift_moves_start_only(self, geometry):
        scenario = Scenario(kind=ScenarioKind.ENV_SHIFT)
        np.testing.assert_array_equal(scenario_start(scenario), geometry.env_shift_start)
        np.testing.assert_array_equal(scenario_goal(scenario, 7), geometry.g0)
        np.testing.assert_array_equal(scenario_start(Scenario()), geometry.start)

    def test_breakpoints_must_increase(self):
        with pytest.raises(ValidationError):
            Scenario(kind=ScenarioKind.DRIFT, drift_episodes=(8, 5, 11))

    def test_breakpoint_beyond_run(self):
        with pytest.raises(InvalidConfigurationError):
            Scenario(kind=ScenarioKind.SHIFT, shift_episode=5).validate_for(4)
        Scenario(kind=ScenarioKind.SHIFT, shift_episode=5).validate_for(6)

    def test_negative_episode(self):
        with pytest.raises(InvalidConfigurationError):
            scenario_goal(Scenario(), -1)


class TestDemos:
    """Noisy expert demonstrations"""

    def test_noise_free_demos_follow_labels(self, geometry):
        demos = collect_demos(2, ExpertPolicy(geometry.g0), DemoNoise(std=0.0), seed=0)
        for i in range(len(demos) - 1):
            if np.array_equal(demos.inputs[i + 1], demos.inputs[0]):
                continue
            np.testing.assert_allclose(position_of(demos.inputs[i + 1]), demos.actions[i][:3])

    def test_default_demos(self, geometry):
        demos = collect_demos(10, ExpertPolicy(geometry.g0), seed=0)
        assert len(demos.trajectories) == 10
        assert len(demos) == sum(t.shape[0] - 1 for t in demos.trajectories)
        assert np.all(demos.actions[:, 3] == 1.0)
        assert np.all(demos.inputs[:, 3::4] == 1.0)

    def test_deterministic(self, geometry):
        a = collect_demos(3, ExpertPolicy(geometry.g0), seed=4)
        b = collect_demos(3, ExpertPolicy(geometry.g0), seed=4)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.actions, b.actions)

    def test_noise_changes_executed_path(self, geometry):
        clean = collect_demos(1, ExpertPolicy(geometry.g0), DemoNoise(std=0.0), seed=0)
        noisy = collect_demos(1, ExpertPolicy(geometry.g0), seed=0)
        assert not np.array_equal(clean.inputs[:5], noisy.inputs[:5])

    def test_additive_mode(self, geometry):
        demos = collect_demos(1, ExpertPolicy(geometry.g0), DemoNoise(mode=NoiseMode.ADDITIVE, std=1.0), seed=0)
        assert len(demos) > 0

    def test_needs_one_demo(self, geometry):
        with pytest.raises(InvalidConfigurationError):
            collect_demos(0, ExpertPolicy(geometry.g0))


class TestTraces:
    """Execution trace export"""

    def test_trace_csv(self, tmp_path):
        inputs = [np.arange(12.0), np.arange(12.0) + 1]
        actions = [np.ones(4), np.zeros(4)]
        frame = trace_frame(inputs, actions, ["robot", "human"])
        assert list(frame.columns) == TRACE_COLUMNS
        path = tmp_path / "sub" / "trace.csv"
        write_trace_csv(frame, path)
        loaded = pd.read_csv(path)
        assert list(loaded["src"]) == ["robot", "human"]
        assert loaded["x12"].iloc[1] == 12.0
