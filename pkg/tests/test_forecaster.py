import logging

import numpy as np
import pytest

from conformal_dagger.exceptions import DimensionMismatchError, InsufficientHistoryError, InvalidConfigurationError, \
    ModelNotFittedError
from conformal_dagger.forecaster import ArModel, fit, predict


class TestArFit:
    """OLS fit of the autoregressive base model"""

    def test_constant_series(self):
        model = fit([5.0] * 6, order=3)
        assert model.predict_next([5.0] * 6) == pytest.approx(5.0, abs=1e-9)

    def test_recovers_ar1_generator(self):
        y = [0.0]
        for _ in range(30):
            y.append(0.8 * y[-1] + 1.0)
        model = fit(y, order=1)
        np.testing.assert_allclose(model.coefficients, [1.0, 0.8], atol=1e-6)
        assert not model.used_ridge

    def test_alternating_series(self):
        y = [1.0 if i % 2 == 0 else -1.0 for i in range(40)]
        model = fit(y, order=3)
        assert model.predict_next(y) == pytest.approx(-y[-1], abs=1e-6)

    def test_predict_orders_lags_most_recent_first(self):
        model = ArModel(order=2)
        model.coefficients = np.array([0.5, 2.0, -1.0])
        assert predict(model, [3.0, 1.0]) == pytest.approx(0.5 + 6.0 - 1.0)
        assert model.predict_next([1.0, 3.0]) == pytest.approx(5.5)

    def test_fit_window_uses_tail(self):
        head = list(np.linspace(100.0, 50.0, 50))
        tail = [0.0]
        for _ in range(20):
            tail.append(0.5 * tail[-1] + 2.0)
        model = fit(head + tail, order=1, fit_window=len(tail))
        np.testing.assert_allclose(model.coefficients, [2.0, 0.5], atol=1e-6)

    def test_rank_deficiency_warns_once(self, caplog):
        model = ArModel(order=3)
        with caplog.at_level(logging.DEBUG, logger="conformal_dagger.forecaster"):
            model.fit([2.0] * 10)
            model.fit([2.0] * 11)
        warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
        assert len(warnings) == 1
        assert model.used_ridge

    def test_refit_is_deterministic(self):
        """Refitting the same history gives bit-identical coefficients"""
        y = np.random.default_rng(5).normal(size=120).cumsum()
        a = fit(y, order=3).coefficients
        b = fit(y, order=3).coefficients
        np.testing.assert_array_equal(a, b)

    def test_prediction_is_affine_in_lags(self):
        """f(a*u + (1-a)*v) = a*f(u) + (1-a)*f(v)"""
        y = np.random.default_rng(6).normal(size=120).cumsum()
        model = fit(y, order=3)
        u, v = np.array([1.0, -2.0, 0.5]), np.array([4.0, 0.0, -3.0])
        for a in (0.0, 0.3, 1.7):
            mixed = model.predict(a * u + (1 - a) * v)
            assert mixed == pytest.approx(a * model.predict(u) + (1 - a) * model.predict(v), abs=1e-9)


class TestArErrors:
    """Input validation"""

    def test_short_history(self):
        with pytest.raises(InsufficientHistoryError):
            fit([1.0, 2.0, 3.0], order=3)

    def test_predict_before_fit(self):
        with pytest.raises(ModelNotFittedError):
            ArModel().predict([1.0, 2.0, 3.0])

    def test_lag_vector_length(self):
        model = fit(np.arange(20.0) ** 1.5, order=3)
        with pytest.raises(DimensionMismatchError):
            model.predict([1.0, 2.0])

    @pytest.mark.parametrize("kwargs", [{"order": 0}, {"order": 3, "fit_window": 3}])
    def test_invalid_configuration(self, kwargs):
        with pytest.raises(InvalidConfigurationError):
            ArModel(**kwargs)
