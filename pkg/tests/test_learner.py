import json

import numpy as np
import pytest

from conformal_dagger.exceptions import (
    DimensionMismatchError,
    InsufficientHistoryError,
    InvalidConfigurationError,
    TrainingDivergenceError,
)
from conformal_dagger.learner import (
    Head,
    Mlp,
    OptimizerKind,
    ReplayBuffer,
    TrainConfig,
    ensemble_predict,
    ensemble_variance,
    forward,
    grad_check,
    train,
)
from conformal_dagger.seeding import named_rng


def manual_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    a = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = z if i == len(net.weights) - 1 else np.where(z > 0, z, 0.0)
    return 1.0 / (1.0 + np.exp(-a)) if net.head == Head.LOGISTIC else a


@pytest.fixture
def small_net():
    return Mlp([4, 8, 6, 2], seed=1)


class TestForward:
    """Forward pass"""

    def test_zero_net(self):
        net = Mlp.zeros([3, 5, 2])
        np.testing.assert_array_equal(forward(net, [1.0, -2.0, 3.0]), [0.0, 0.0])

    def test_identity_layer(self):
        net = Mlp.zeros([3, 3])
        net.weights[0] = np.eye(3)
        np.testing.assert_array_equal(forward(net, [0.5, -1.0, 2.0]), [0.5, -1.0, 2.0])

    @pytest.mark.parametrize("head", list(Head))
    def test_matches_independent_evaluation(self, head):
        net = Mlp([5, 7, 7, 3], head, seed=4)
        x = named_rng(0, "x").standard_normal((10, 5))
        np.testing.assert_allclose(net.forward(x), manual_forward(net, x), atol=1e-12, rtol=0)

    def test_single_input_returns_vector(self, small_net):
        assert small_net.forward(np.zeros(4)).shape == (2,)
        assert small_net.forward(np.zeros((3, 4))).shape == (3, 2)

    def test_wrong_input_size(self, small_net):
        with pytest.raises(DimensionMismatchError):
            small_net.forward(np.zeros(5))

    def test_seeded_init(self):
        np.testing.assert_array_equal(Mlp([3, 4, 1], seed=7).get_flat(), Mlp([3, 4, 1], seed=7).get_flat())
        assert not np.array_equal(Mlp([3, 4, 1], seed=7).get_flat(), Mlp([3, 4, 1], seed=8).get_flat())

    def test_flat_round_trip(self, small_net):
        flat = small_net.get_flat()
        assert flat.size == small_net.n_params
        twin = Mlp.zeros(small_net.layer_sizes)
        twin.set_flat(flat)
        np.testing.assert_array_equal(twin.forward(np.ones(4)), small_net.forward(np.ones(4)))


class TestTrain:
    """Minibatch training"""

    def test_learns_linear_slope(self):
        rng = named_rng(0, "slope")
        x = rng.uniform(-1.0, 1.0, size=(64, 1))
        net = Mlp([1, 1], seed=0)
        train(net, (x, 2.0 * x), TrainConfig(learning_rate=0.1, batch_size=16, iterations=200))
        assert net.weights[0][0, 0] == pytest.approx(2.0, abs=0.05)

    def test_zero_iterations(self, small_net):
        before = small_net.get_flat()
        train(small_net, (np.ones((5, 4)), np.zeros((5, 2))), TrainConfig(iterations=0))
        np.testing.assert_array_equal(small_net.get_flat(), before)

    def test_classifier_separates_blobs(self):
        rng = named_rng(1, "blobs")
        x = np.vstack([rng.normal(-2.0, 0.5, size=(50, 2)), rng.normal(2.0, 0.5, size=(50, 2))])
        y = np.concatenate([np.zeros(50), np.ones(50)])
        net = Mlp([2, 8, 1], Head.LOGISTIC, seed=0)
        train(net, (x, y), TrainConfig(learning_rate=0.01, iterations=300, optimizer=OptimizerKind.ADAM))
        accuracy = np.mean((net.forward(x)[:, 0] > 0.5) == (y > 0.5))
        assert accuracy >= 0.95

    def test_same_seed_same_result(self):
        x = named_rng(2, "x").standard_normal((40, 3))
        y = x.sum(axis=1, keepdims=True)
        config = TrainConfig(learning_rate=0.01, iterations=30, batch_size=8, seed=5, optimizer=OptimizerKind.ADAM)
        a = train(Mlp([3, 4, 1], seed=0), (x, y), config)
        b = train(Mlp([3, 4, 1], seed=0), (x, y), config)
        np.testing.assert_array_equal(a.get_flat(), b.get_flat())
        assert len(a.loss_history) == 30

    def test_trains_from_buffer(self):
        buffer = ReplayBuffer(10)
        for i in range(10):
            buffer.add([float(i)], [float(i)])
        net = train(Mlp([1, 1], seed=0), buffer, TrainConfig(iterations=5))
        assert len(net.loss_history) == 5

    def test_empty_data(self, small_net):
        with pytest.raises(InsufficientHistoryError):
            train(small_net, ReplayBuffer(5), TrainConfig())

    def test_nan_loss_aborts(self, small_net):
        targets = np.full((4, 2), np.nan)
        with pytest.raises(TrainingDivergenceError) as exc_info:
            train(small_net, (np.ones((4, 4)), targets), TrainConfig(iterations=3))
        assert exc_info.value.iteration == 0


class TestGradCheck:
    """Backprop against finite differences"""

    def test_linear_regressor_exact(self):
        net = Mlp([3, 2], seed=2)
        result = grad_check(net, [[0.3, -0.7, 1.1]], [[0.5, -0.2]])
        assert result.max_relative_error < 1e-7
        assert result.excluded == 0
        assert result.checked == net.n_params

    @pytest.mark.parametrize("head", list(Head))
    def test_rectifier_net(self, head):
        net = Mlp([4, 6, 6, 3], head, seed=3)
        x = named_rng(3, "gc").uniform(-1.0, 1.0, size=(1, 4))
        target = [[1.0, 0.0, 1.0]] if head == Head.LOGISTIC else [[0.2, -0.4, 0.9]]
        assert grad_check(net, x, target).max_relative_error < 1e-4

    def test_kink_is_excluded(self):
        net = Mlp([2, 3, 1], seed=0)
        net.biases[0] = np.zeros(3)
        result = grad_check(net, [[0.0, 0.0]], [[1.0]])
        assert result.excluded >= 3

    def test_parameter_sampling(self):
        net = Mlp([12, 64, 64, 4], seed=0)
        result = grad_check(net, np.full((1, 12), 0.1), np.zeros((1, 4)), max_params=50)
        assert result.checked + result.excluded == 50


class TestEnsemble:
    """Ensemble prediction and disagreement"""

    def test_identical_members(self, small_net):
        variance, mean = ensemble_variance([small_net, small_net.copy()], np.ones(4))
        np.testing.assert_array_equal(variance, [0.0, 0.0])
        assert mean == 0.0

    def test_two_point_variance(self):
        a, b = Mlp.zeros([1, 1]), Mlp.zeros([1, 1])
        b.biases[0] = np.array([2.0])
        variance, mean = ensemble_variance([a, b], [0.0])
        assert variance[0] == pytest.approx(1.0)
        assert mean == pytest.approx(1.0)

    def test_matches_brute_force(self):
        members = [Mlp([3, 5, 2], seed=s) for s in range(3)]
        x = np.array([0.2, -0.3, 0.5])
        outputs = [manual_forward(m, x[None, :])[0] for m in members]
        expected = [np.mean([(o[d] - np.mean([p[d] for p in outputs])) ** 2 for o in outputs]) for d in range(2)]
        variance, _ = ensemble_variance(members, x)
        np.testing.assert_allclose(variance, expected, atol=1e-12)

    def test_needs_two_members(self, small_net):
        with pytest.raises(InvalidConfigurationError):
            ensemble_predict([small_net], np.ones(4))

    def test_mismatched_members(self, small_net):
        with pytest.raises(DimensionMismatchError):
            ensemble_predict([small_net, Mlp([4, 3])], np.ones(4))


class TestReplayBuffer:
    """FIFO replay buffer"""

    def test_fifo_eviction(self):
        buffer = ReplayBuffer(3)
        buffer.extend(([float(i)], [float(i)]) for i in range(5))
        xs, ys = buffer.as_arrays()
        np.testing.assert_array_equal(xs[:, 0], [2.0, 3.0, 4.0])
        assert len(buffer) == 3

    def test_entries_are_copies(self):
        buffer = ReplayBuffer(2)
        x = np.zeros(2)
        buffer.add(x, [1.0])
        x[0] = 5.0
        assert buffer.entries[0][0][0] == 0.0

    def test_invalid_capacity(self):
        with pytest.raises(InvalidConfigurationError):
            ReplayBuffer(0)


class TestPersistence:
    """Parameter file save/load"""

    def test_save_load(self, tmp_path, small_net):
        path = tmp_path / "net.json"
        small_net.save(path)
        header = json.loads(path.read_text())
        assert header["format"] == "conformal-dagger-mlp"
        assert header["version"] == 1
        loaded = Mlp.load(path)
        np.testing.assert_array_equal(loaded.forward(np.ones(4)), small_net.forward(np.ones(4)))

    def test_rejects_other_format(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else", "version": 1}))
        with pytest.raises(InvalidConfigurationError):
            Mlp.load(path)
