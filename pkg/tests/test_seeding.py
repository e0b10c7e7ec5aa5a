"""
Tests for named random streams and the exception hierarchy
"""
import pickle

import numpy as np
import pytest

from conformal_dagger.exceptions import (
    ConformalDaggerError,
    DatasetNotFoundError,
    DimensionMismatchError,
    InvalidConfigurationError,
    TrainingDivergenceError,
    UnknownMethodError,
)
from conformal_dagger.seeding import derive_seed, named_rng


class TestNamedStreams:
    """Substreams of one root seed"""

    def test_reproducible(self):
        """Same seed and names, same draws"""
        np.testing.assert_array_equal(named_rng(7, "obs").random(5), named_rng(7, "obs").random(5))

    @pytest.mark.parametrize("a,b", [
        ((7, "obs"), (7, "init")),
        ((7, "obs"), (8, "obs")),
        ((7, "ensemble", 1), (7, "ensemble", 2)),
    ])
    def test_independent(self, a, b):
        """Different seeds or names give different draws"""
        assert not np.array_equal(named_rng(*a).random(5), named_rng(*b).random(5))

    def test_derive_seed(self):
        """Derived seeds are stable non-negative ints"""
        seed = derive_seed(3, "init", "policy")
        assert seed == derive_seed(3, "init", "policy")
        assert 0 <= seed < 2**31
        assert seed != derive_seed(3, "init", "classifier")


class TestExceptions:
    """Error messages, codes and pickling across the process pool"""

    @pytest.mark.parametrize("error", [
        InvalidConfigurationError("alpha", 1.5),
        DimensionMismatchError(4, 3, "prediction"),
        TrainingDivergenceError(12, float("nan"), "lr too high"),
        DatasetNotFoundError("data/AMZN.csv", "dataset 'amazon'"),
        UnknownMethodError("bogus", ["conformal", "safe"]),
    ])
    def test_pickle_round_trip(self, error):
        """Errors raised in workers keep message and attributes"""
        restored = pickle.loads(pickle.dumps(error))
        assert type(restored) is type(error)
        assert str(restored) == str(error)
        assert isinstance(restored, ConformalDaggerError)
        assert restored.error_code == error.error_code

    def test_messages(self):
        """Messages carry the structured fields"""
        assert "alpha" in str(InvalidConfigurationError("alpha", 1.5))
        assert "expected 4, got 3" in str(DimensionMismatchError(4, 3))
        assert str(DatasetNotFoundError("x.csv")) == "Dataset not found: x.csv"

    def test_config_errors_exit_code(self):
        """Config-class errors carry exit code 2"""
        assert InvalidConfigurationError("k", "v").error_code == 2
        assert UnknownMethodError("x", []).error_code == 2
