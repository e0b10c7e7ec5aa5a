import logging
from typing import Optional

import numpy as np

from .exceptions import DimensionMismatchError, InsufficientHistoryError, InvalidConfigurationError, ModelNotFittedError

logger = logging.getLogger(__name__)

RIDGE = 1e-8


class ArModel:
    """
    AR(order) point forecaster fitted by ordinary least squares.

    coefficients[0] is the intercept, coefficients[k] multiplies y_{t-k}.
    Lag vectors passed to predict() are ordered most recent first.
    """

    def __init__(self, order: int = 3, fit_window: Optional[int] = None):
        if order < 1:
            raise InvalidConfigurationError("order", order, f"AR order must be positive, got {order}")
        if fit_window is not None and fit_window < order + 1:
            raise InvalidConfigurationError("fit_window", fit_window, f"fit_window must be at least {order + 1}")
        self.order = order
        self.fit_window = fit_window
        self.coefficients: Optional[np.ndarray] = None
        self.used_ridge = False
        self._warned = False

    @property
    def is_fitted(self) -> bool:
        return self.coefficients is not None

    def fit(self, history) -> "ArModel":
        x = np.asarray(history, dtype=float)
        if self.fit_window is not None:
            x = x[-self.fit_window:]
        p = self.order
        n = x.size
        if n < p + 1:
            raise InsufficientHistoryError(p + 1, n)

        design = np.column_stack([np.ones(n - p)] + [x[p - k:n - k] for k in range(1, p + 1)])
        target = x[p:]
        beta, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        self.used_ridge = rank < p + 1
        if self.used_ridge:
            # Rank-deficient lags (constant or exactly periodic series)
            log = logger.debug if self._warned else logger.warning
            log("AR design rank %d < %d, falling back to ridge %.0e", rank, p + 1, RIDGE)
            self._warned = True
            augmented = np.vstack([design, np.sqrt(RIDGE) * np.eye(p + 1)])
            beta = np.linalg.lstsq(augmented, np.concatenate([target, np.zeros(p + 1)]), rcond=None)[0]
        self.coefficients = beta
        return self

    def predict(self, recent) -> float:
        """intercept + sum_k coef_k * recent[k-1], recent[0] = y_{t-1}"""
        if not self.is_fitted:
            raise ModelNotFittedError("ArModel")
        lags = np.asarray(recent, dtype=float)
        if lags.shape != (self.order,):
            raise DimensionMismatchError(self.order, lags.size, "lag vector")
        return float(self.coefficients[0] + self.coefficients[1:] @ lags)

    def predict_next(self, history) -> float:
        """One-step-ahead forecast from the tail of a series (oldest first)"""
        x = np.asarray(history, dtype=float)
        if x.size < self.order:
            raise InsufficientHistoryError(self.order, x.size)
        return self.predict(x[-self.order:][::-1])


def fit(history, order: int = 3, fit_window: Optional[int] = None) -> ArModel:
    return ArModel(order=order, fit_window=fit_window).fit(history)


def predict(model: ArModel, recent) -> float:
    return model.predict(recent)
