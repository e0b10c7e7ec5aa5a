import hashlib
import itertools
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Tuple, Type, TypeVar, Union

import yaml
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .conformal import ScheduleKind
from .dagger import VALID_METHODS, DaggerConfig, Method, PolicyConfig
from .env import Geometry, Scenario, ScenarioKind
from .exceptions import InvalidConfigurationError, UnknownMethodError
from .gating import BaselineConfig, GateConfig
from .timeseries import BenchConfig, DatasetSpec

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class Settings(BaseSettings):
    """Process-level defaults, overridable through CONFORMAL_DAGGER_* variables"""
    model_config = SettingsConfigDict(env_prefix="CONFORMAL_DAGGER_", case_sensitive=False)

    output_root: str = Field(default="results", description="Default output directory")
    jobs: int = Field(default=1, ge=1, description="Default worker processes")
    log_level: str = Field(default="INFO")


class BenchSuiteConfig(BaseModel):
    """Every (dataset, p, lr, variant) combination, each run over all seeds"""
    kind: Literal["bench"] = "bench"
    datasets: List[DatasetSpec] = Field(..., min_length=1)
    alpha: float = Field(default=0.1, gt=0, lt=1)
    ps: List[Union[float, List[float]]] = Field(default_factory=lambda: [0.1, 0.5, 0.9])
    lrs: List[float] = Field(default_factory=lambda: [1.0, 0.1, 0.01])
    variants: List[Literal["pi", "pd"]] = Field(default_factory=lambda: ["pi", "pd"])
    schedule: ScheduleKind = Field(default=ScheduleKind.LOOKBACK)
    lookback_k: int = Field(default=100, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    warmup: int = Field(default=50, ge=4)
    order: int = Field(default=3, ge=1)
    fit_window: Union[int, None] = Field(default=None)
    ma_window: int = Field(default=50, ge=1)

    def expand(self) -> List[Tuple[DatasetSpec, BenchConfig]]:
        runs = []
        for dataset, p, lr, variant in itertools.product(self.datasets, self.ps, self.lrs, self.variants):
            runs.append((dataset, BenchConfig(
                alpha=self.alpha,
                p=p,
                lr=lr,
                p_dependent=variant == "pd",
                schedule=self.schedule,
                lookback_k=dataset.lookback_k or self.lookback_k,
                seeds=self.seeds,
                warmup=self.warmup,
                order=self.order,
                fit_window=self.fit_window,
                ma_window=self.ma_window,
            )))
        return runs


class DaggerSuiteConfig(BaseModel):
    """Methods x scenarios x seeds (x sweep points) of the reaching simulation"""
    kind: Literal["dagger"] = "dagger"
    methods: List[Method] = Field(default_factory=lambda: list(Method))
    scenarios: List[Scenario] = Field(
        default_factory=lambda: [Scenario(kind=k) for k in ScenarioKind]
    )
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    episodes: int = Field(default=15, ge=0)
    executions: int = Field(default=2, ge=1)
    gate: GateConfig = Field(default_factory=GateConfig)
    baselines: BaselineConfig = Field(default_factory=BaselineConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    geometry: Geometry = Field(default_factory=Geometry)
    sweep: Dict[str, List[Any]] = Field(
        default_factory=dict, description="Dotted DaggerConfig path -> values; runs take the cartesian product"
    )

    def _sweep_points(self) -> List[Dict[str, Any]]:
        if not self.sweep:
            return [{}]
        keys = sorted(self.sweep)
        return [dict(zip(keys, values)) for values in itertools.product(*(self.sweep[k] for k in keys))]

    def expand(self) -> List[DaggerConfig]:
        base = {
            "episodes": self.episodes,
            "executions": self.executions,
            "gate": self.gate.model_dump(mode="json"),
            "baselines": self.baselines.model_dump(mode="json"),
            "policy": self.policy.model_dump(mode="json"),
            "geometry": self.geometry.model_dump(mode="json"),
        }
        runs = []
        for point in self._sweep_points():
            label = "_".join(f"{k}={v}" for k, v in point.items())
            for method, scenario, seed in itertools.product(self.methods, self.scenarios, self.seeds):
                payload = json.loads(json.dumps(base))
                payload.update(method=method.value, scenario=scenario.model_dump(mode="json"), seed=seed, label=label)
                for path, value in point.items():
                    _set_path(payload, path, value)
                runs.append(_validate(DaggerConfig, payload, "sweep"))
        return runs


def _set_path(payload: Dict[str, Any], path: str, value: Any) -> None:
    node = payload
    parts = path.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise InvalidConfigurationError("sweep", path, f"sweep path '{path}' does not name a config field")
        node = node[part]
    if parts[-1] not in node:
        raise InvalidConfigurationError("sweep", path, f"sweep path '{path}' does not name a config field")
    node[parts[-1]] = value


def _validate(model: Type[ConfigT], payload: Dict[str, Any], source: str) -> ConfigT:
    try:
        return model.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"]) or source
        raise InvalidConfigurationError(key, first.get("input"), f"{source}: {key}: {first['msg']}") from e


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfigurationError("config", str(path), f"config file not found: {path}")
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise InvalidConfigurationError("config", str(path), f"{path} is not valid YAML: {e}") from e
    if not isinstance(payload, dict):
        raise InvalidConfigurationError("config", str(path), f"{path} must hold a mapping at top level")
    return payload


def load_bench_config(path: Union[str, Path]) -> BenchSuiteConfig:
    return _validate(BenchSuiteConfig, _read_yaml(path), str(path))


def load_dagger_config(path: Union[str, Path]) -> DaggerSuiteConfig:
    payload = _read_yaml(path)
    for name in payload.get("methods") or []:
        if name not in VALID_METHODS:
            raise UnknownMethodError(str(name), VALID_METHODS)
    return _validate(DaggerSuiteConfig, payload, str(path))


def config_hash(config: BaseModel) -> str:
    """SHA-256 of the canonical JSON dump"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
