from typing import Any, Optional, Sequence


def _restore_error(cls, message: str, attributes: dict):
    error = Exception.__new__(cls)
    Exception.__init__(error, message)
    error.__dict__.update(attributes)
    return error


class ConformalDaggerError(Exception):
    """Base exception for conformal-dagger errors"""
    def __init__(self, message: str, error_code: Optional[int] = None):
        self.error_code = error_code
        super().__init__(message)

    def __reduce__(self):
        # rebuilt from message and attributes; subclass __init__ signatures differ
        return _restore_error, (self.__class__, str(self), dict(self.__dict__))


class InvalidConfigurationError(ConformalDaggerError):
    """Invalid experiment or component configuration"""
    def __init__(self, config_key: str, config_value: Any, message: Optional[str] = None):
        self.config_key = config_key
        self.config_value = config_value
        error_message = message or f"Invalid configuration for key '{config_key}' with value '{config_value}'"
        super().__init__(error_message, error_code=2)


class InvalidProbabilityError(ConformalDaggerError):
    """Observation or gate probability outside its admissible range"""
    def __init__(self, name: str, value: float, admissible: str = "(0, 1]"):
        self.name = name
        self.value = value
        super().__init__(f"Probability '{name}'={value} outside {admissible}", error_code=2)


class DimensionMismatchError(ConformalDaggerError):
    """Vector length does not match the component it is fed to"""
    def __init__(self, expected: int, actual: int, what: str = "input"):
        self.expected = expected
        self.actual = actual
        self.what = what
        super().__init__(f"Dimension mismatch for {what}: expected {expected}, got {actual}")


class EmptyWindowError(ConformalDaggerError):
    """Quantile requested from an empty score window"""
    def __init__(self, level: float):
        self.level = level
        super().__init__(f"Cannot take the {level}-quantile of an empty score window")


class InsufficientHistoryError(ConformalDaggerError):
    """Not enough points to fit a model"""
    def __init__(self, required: int, actual: int):
        self.required = required
        self.actual = actual
        super().__init__(f"Need at least {required} points to fit, got {actual}")


class ModelNotFittedError(ConformalDaggerError):
    """Prediction requested before fit"""
    def __init__(self, model_name: str):
        self.model_name = model_name
        super().__init__(f"{model_name} has not been fitted")


class TrainingDivergenceError(ConformalDaggerError):
    """Loss became non-finite during training"""
    def __init__(self, iteration: int, loss: float, detail: Optional[str] = None):
        self.iteration = iteration
        self.loss = loss
        error_message = f"Training diverged at iteration {iteration} (loss={loss})"
        if detail:
            error_message += f": {detail}"
        super().__init__(error_message)


class DatasetNotFoundError(ConformalDaggerError):
    """Dataset file referenced by a config does not exist"""
    def __init__(self, path: str, reason: Optional[str] = None):
        self.path = path
        self.reason = reason
        error_message = f"Dataset not found: {path}"
        if reason:
            error_message += f" ({reason})"
        super().__init__(error_message, error_code=2)


class UnknownMethodError(ConformalDaggerError):
    """Method name not among the supported interactive learners"""
    def __init__(self, name: str, valid: Sequence[str]):
        self.name = name
        self.valid = list(valid)
        super().__init__(f"Unknown method '{name}'; valid methods: {', '.join(self.valid)}", error_code=2)


class InvalidObservationError(ConformalDaggerError):
    """Observation event whose score fields disagree with its observed flag"""
    def __init__(self, observed: bool, reason: str):
        self.observed = observed
        self.reason = reason
        super().__init__(f"Invalid observation (observed={observed}): {reason}")
