import json
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .exceptions import (
    DimensionMismatchError,
    InsufficientHistoryError,
    InvalidConfigurationError,
    TrainingDivergenceError,
)
from .seeding import named_rng

logger = logging.getLogger(__name__)

MLP_FORMAT = "conformal-dagger-mlp"
MLP_FORMAT_VERSION = 1

# Policy and safety-classifier hidden sizes for the simulated reaching task
POLICY_HIDDEN = [64, 128, 472, 512, 256, 64, 42]
CLASSIFIER_HIDDEN = [64, 128, 64, 42]


class Head(str, Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=0.001, gt=0)
    batch_size: int = Field(default=32, ge=1)
    iterations: int = Field(default=200, ge=0, description="Minibatch steps (200 initial, 100 fine-tune)")
    seed: int = Field(default=0)
    optimizer: OptimizerKind = Field(default=OptimizerKind.SGD)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)


class Mlp:
    """
    Feedforward network with rectifier hidden layers and a linear or logistic head.

    weights[i] has shape (layer_sizes[i], layer_sizes[i+1]); inputs are row
    vectors, so a batch of N inputs is an (N, in) array.
    """

    def __init__(self, layer_sizes: Sequence[int], head: Head = Head.LINEAR, seed: int = 0):
        if len(layer_sizes) < 2 or any(int(n) < 1 for n in layer_sizes):
            raise InvalidConfigurationError("layer_sizes", list(layer_sizes))
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.head = Head(head)
        rng = named_rng(seed, "init")
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-limit, limit, size=fan_out))
        self.loss_history: List[float] = []

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int], head: Head = Head.LINEAR) -> "Mlp":
        net = cls(layer_sizes, head)
        net.weights = [np.zeros_like(w) for w in net.weights]
        net.biases = [np.zeros_like(b) for b in net.biases]
        return net

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.layer_sizes = list(self.layer_sizes)
        twin.head = self.head
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        twin.loss_history = list(self.loss_history)
        return twin

    def _as_batch(self, x) -> Tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        batch = arr[None, :] if single else arr
        if batch.ndim != 2 or batch.shape[1] != self.input_size:
            raise DimensionMismatchError(self.input_size, batch.shape[-1], "network input")
        return batch, single

    def _propagate(self, batch: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Activations (input first) and pre-activations of every layer; last entry is the logit"""
        activations = [batch]
        pre_activations = []
        last = len(self.weights) - 1
        a = batch
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre_activations.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            activations.append(a)
        return activations, pre_activations

    def _apply_head(self, logits: np.ndarray) -> np.ndarray:
        if self.head == Head.LOGISTIC:
            return 1.0 / (1.0 + np.exp(-logits))
        return logits

    def forward(self, x) -> np.ndarray:
        batch, single = self._as_batch(x)
        activations, _ = self._propagate(batch)
        out = self._apply_head(activations[-1])
        return out[0] if single else out

    def loss(self, x, target) -> float:
        batch, _ = self._as_batch(x)
        y = np.asarray(target, dtype=float).reshape(batch.shape[0], self.output_size)
        logits = self._propagate(batch)[0][-1]
        return self._loss_from_logits(logits, y)

    def _loss_from_logits(self, logits: np.ndarray, y: np.ndarray) -> float:
        if self.head == Head.LOGISTIC:
            # binary cross-entropy on logits
            return float(np.mean(np.logaddexp(0.0, logits) - y * logits))
        return float(np.mean((logits - y) ** 2))

    def loss_and_grads(self, x, target) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
        batch, _ = self._as_batch(x)
        y = np.asarray(target, dtype=float).reshape(batch.shape[0], self.output_size)
        activations, pre_activations = self._propagate(batch)
        logits = activations[-1]
        scale = 1.0 / logits.size
        if self.head == Head.LOGISTIC:
            delta = (1.0 / (1.0 + np.exp(-logits)) - y) * scale
        else:
            delta = 2.0 * (logits - y) * scale

        grads_w: List[np.ndarray] = [None] * len(self.weights)
        grads_b: List[np.ndarray] = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = activations[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre_activations[i - 1] > 0)
        return self._loss_from_logits(logits, y), grads_w, grads_b

    def loss_and_pattern(self, x, target) -> Tuple[float, List[np.ndarray]]:
        """Loss and rectifier on/off pattern from a single pass"""
        batch, _ = self._as_batch(x)
        y = np.asarray(target, dtype=float).reshape(batch.shape[0], self.output_size)
        activations, pre_activations = self._propagate(batch)
        return self._loss_from_logits(activations[-1], y), [z > 0 for z in pre_activations[:-1]]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise DimensionMismatchError(self.n_params, flat.size, "parameter vector")
        offset = 0
        for i in range(len(self.weights)):
            for store in (self.weights, self.biases):
                size = store[i].size
                store[i] = flat[offset:offset + size].reshape(store[i].shape).copy()
                offset += size

    def save(self, path: Union[str, Path]) -> None:
        payload = {
            "format": MLP_FORMAT,
            "version": MLP_FORMAT_VERSION,
            "layer_sizes": self.layer_sizes,
            "head": self.head.value,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Mlp":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != MLP_FORMAT or payload.get("version") != MLP_FORMAT_VERSION:
            raise InvalidConfigurationError(
                "format", f"{payload.get('format')} v{payload.get('version')}",
                f"{path} is not a {MLP_FORMAT} v{MLP_FORMAT_VERSION} file",
            )
        net = cls.zeros(payload["layer_sizes"], Head(payload["head"]))
        net.weights = [np.asarray(w, dtype=float).reshape(s) for w, s in
                       zip(payload["weights"], [w.shape for w in net.weights])]
        net.biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
        return net


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


class ReplayBuffer:
    """FIFO buffer of (input, target) pairs; the oldest pairs drop out past capacity"""

    def __init__(self, capacity: int = 300):
        if capacity < 1:
            raise InvalidConfigurationError("capacity", capacity)
        self.capacity = capacity
        self._entries: deque = deque(maxlen=capacity)

    def add(self, x, target) -> None:
        self._entries.append((np.asarray(x, dtype=float).copy(), np.asarray(target, dtype=float).copy()))

    def extend(self, pairs: Iterable[Tuple[np.ndarray, np.ndarray]]) -> None:
        for x, target in pairs:
            self.add(x, target)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(self._entries)

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self._entries:
            raise InsufficientHistoryError(1, 0)
        xs, ys = zip(*self._entries)
        return np.stack(xs), np.stack(ys)


class _Adam:
    def __init__(self, net: Mlp, config: TrainConfig):
        self.config = config
        self.m = [np.zeros_like(p) for p in net.weights + net.biases]
        self.v = [np.zeros_like(p) for p in net.weights + net.biases]
        self.t = 0

    def directions(self, grads: List[np.ndarray]) -> List[np.ndarray]:
        c = self.config
        self.t += 1
        out = []
        for i, g in enumerate(grads):
            self.m[i] = c.adam_beta1 * self.m[i] + (1 - c.adam_beta1) * g
            self.v[i] = c.adam_beta2 * self.v[i] + (1 - c.adam_beta2) * g * g
            m_hat = self.m[i] / (1 - c.adam_beta1 ** self.t)
            v_hat = self.v[i] / (1 - c.adam_beta2 ** self.t)
            out.append(m_hat / (np.sqrt(v_hat) + c.adam_eps))
        return out


def train(net: Mlp, data, config: TrainConfig) -> Mlp:
    """
    Minibatch gradient descent on MSE (linear head) or BCE (logistic head).

    data is a ReplayBuffer or an (inputs, targets) pair. Batches come from a
    seeded permutation that is redrawn once exhausted. A non-finite loss
    aborts with TrainingDivergenceError.
    """
    x, y = data.as_arrays() if isinstance(data, ReplayBuffer) else (np.asarray(data[0], float), np.asarray(data[1], float))
    n = x.shape[0] if x.ndim else 0
    if n == 0:
        raise InsufficientHistoryError(1, 0)
    y = y.reshape(n, net.output_size)
    rng = named_rng(config.seed, "shuffle")
    adam = _Adam(net, config) if config.optimizer == OptimizerKind.ADAM else None
    batch = min(config.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    losses = []
    for iteration in range(config.iterations):
        if cursor + batch > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + batch]
        cursor += batch
        loss, grads_w, grads_b = net.loss_and_grads(x[idx], y[idx])
        if not np.isfinite(loss):
            raise TrainingDivergenceError(iteration, loss, f"{net.layer_sizes} net, {n} samples")
        grads = grads_w + grads_b
        steps = adam.directions(grads) if adam else grads
        n_layers = len(net.weights)
        for i in range(n_layers):
            net.weights[i] = net.weights[i] - config.learning_rate * steps[i]
            net.biases[i] = net.biases[i] - config.learning_rate * steps[n_layers + i]
        losses.append(loss)
    net.loss_history.extend(losses)
    if losses:
        logger.debug("trained %s for %d iterations: loss %.3e -> %.3e",
                     net.layer_sizes, config.iterations, losses[0], losses[-1])
    return net


@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    checked: int
    excluded: int


def grad_check(net: Mlp, x, target, h: float = 1e-5, max_params: int = 1000, seed: int = 0,
               floor: float = 1e-6) -> GradCheckResult:
    """
    Analytic gradient against central finite differences.

    Checks every parameter when the net has at most max_params of them,
    otherwise a seeded sample of max_params coordinates. Coordinates whose
    perturbation flips any rectifier are excluded (subgradient ambiguity).
    """
    _, grads_w, grads_b = net.loss_and_grads(x, target)
    analytic = np.concatenate([g.ravel() for pair in zip(grads_w, grads_b) for g in pair])
    # flat index -> (array, offset) in the same weight/bias interleaving as get_flat()
    stores = [p for pair in zip(net.weights, net.biases) for p in pair]
    offsets = np.cumsum([0] + [p.size for p in stores])
    total = int(offsets[-1])
    if total <= max_params:
        indices = np.arange(total)
    else:
        indices = np.sort(named_rng(seed, "grad_check").choice(total, size=max_params, replace=False))
    _, pattern = net.loss_and_pattern(x, target)

    worst = 0.0
    excluded = 0
    for i in indices:
        k = int(np.searchsorted(offsets, i, side="right")) - 1
        flat = stores[k].reshape(-1)
        j = int(i - offsets[k])
        original = flat[j]
        flat[j] = original + h
        loss_plus, pattern_plus = net.loss_and_pattern(x, target)
        flat[j] = original - h
        loss_minus, pattern_minus = net.loss_and_pattern(x, target)
        flat[j] = original
        kink = any(
            not (np.array_equal(a, b) and np.array_equal(a, c))
            for a, b, c in zip(pattern, pattern_plus, pattern_minus)
        )
        if kink:
            excluded += 1
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return GradCheckResult(max_relative_error=worst, checked=len(indices) - excluded, excluded=excluded)


def ensemble_predict(members: Sequence[Mlp], x) -> np.ndarray:
    """Member outputs stacked along axis 0"""
    if len(members) < 2:
        raise InvalidConfigurationError("members", len(members), "an ensemble needs at least 2 members")
    shapes = {tuple(m.layer_sizes[:1] + m.layer_sizes[-1:]) for m in members}
    if len(shapes) != 1:
        first = members[0]
        odd = next(m for m in members if m.output_size != first.output_size or m.input_size != first.input_size)
        raise DimensionMismatchError(first.output_size, odd.output_size, "ensemble member output")
    return np.stack([m.forward(x) for m in members])


def ensemble_variance(members: Sequence[Mlp], x) -> Tuple[np.ndarray, float]:
    """Per-output population variance across members, and its mean over outputs"""
    outputs = ensemble_predict(members, x)
    variance = outputs.var(axis=0)
    return variance, float(variance.mean())
