"""Dense feed-forward classifier with grouped parameters and momentum SGD.

Layers carry a group tag so the earlier "representation" part and the deeper
"classification" part of the model can be trained, frozen and swapped
independently. States are value objects: every update returns a new
NetworkState and never mutates parameter arrays in place.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, TrainingDiverged, ValidationError
from .manifest import manifest_value, manifest_values, read_artifact, write_artifact

logger = logging.getLogger(__name__)

REPRESENTATION = "representation"
CLASSIFICATION = "classification"
GROUPS = (REPRESENTATION, CLASSIFICATION)
ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    """Shape, activation and parameter group of one dense layer."""

    input_dim: int
    output_dim: int
    activation: str
    group: str


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 16
    base_lr: float = 3e-4
    classifier_lr_multiplier: float = 1.0
    momentum: float = 0.9
    frozen_groups: frozenset = frozenset()
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_lr <= 0 or self.classifier_lr_multiplier <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        unknown = set(self.frozen_groups) - set(GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups: {sorted(unknown)}")


@dataclass
class Layer:
    weights: np.ndarray  # [output_dim, input_dim]
    bias: np.ndarray  # [output_dim]
    activation: str
    group: str

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(self.weights.shape[1], self.weights.shape[0], self.activation, self.group)


@dataclass
class NetworkState:
    layers: list[Layer]
    label_count: int
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]


@dataclass
class Gradients:
    """Per-layer weight and bias arrays, shape-identical to a NetworkState."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def validate_layer_specs(specs: list[LayerSpec]) -> None:
    if not specs:
        raise ConfigError("network needs at least one layer")
    for i, spec in enumerate(specs):
        if spec.input_dim < 1 or spec.output_dim < 1:
            raise ConfigError(f"layer {i}: dimensions must be positive")
        if spec.activation not in ACTIVATIONS:
            raise ConfigError(f"layer {i}: unknown activation '{spec.activation}'")
        if spec.group not in GROUPS:
            raise ConfigError(f"layer {i}: unknown group '{spec.group}'")
        if i and specs[i - 1].output_dim != spec.input_dim:
            raise ConfigError(
                f"layer {i}: input_dim {spec.input_dim} does not chain with "
                f"previous output_dim {specs[i - 1].output_dim}"
            )
    if specs[-1].activation != "identity" or specs[-1].group != CLASSIFICATION:
        raise ConfigError("final layer must be an identity-activation classification layer")
    groups = [spec.group for spec in specs]
    if REPRESENTATION not in groups:
        raise ConfigError("need at least one representation layer")
    first_cls = groups.index(CLASSIFICATION)
    if REPRESENTATION in groups[first_cls:]:
        raise ConfigError("representation layers must precede classification layers")


def layer_specs(state: NetworkState) -> list[LayerSpec]:
    return [layer.spec for layer in state.layers]


def init_network(specs: list[LayerSpec], seed: int = 0) -> NetworkState:
    """Seeded Gaussian init, std 1/sqrt(input_dim), zero bias."""
    specs = list(specs)
    validate_layer_specs(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        scale = 1.0 / np.sqrt(spec.input_dim)
        weights = rng.normal(0.0, scale, size=(spec.output_dim, spec.input_dim))
        layers.append(Layer(weights, np.zeros(spec.output_dim), spec.activation, spec.group))
    return NetworkState(layers=layers, label_count=specs[-1].output_dim, seed=seed)


def as_batch(state: NetworkState, inputs) -> np.ndarray:
    """Validate a sample matrix against the network input contract."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"inputs must be a 2-d matrix, got shape {x.shape}")
    if x.shape[1] != state.input_dim:
        raise ShapeError(
            f"input dimension {x.shape[1]} does not match network input {state.input_dim}"
        )
    if not np.isfinite(x).all():
        raise ValidationError("inputs contain non-finite values")
    return x


def apply_layer(layer: Layer, x: np.ndarray) -> np.ndarray:
    z = x @ layer.weights.T + layer.bias
    if layer.activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _trace(state: NetworkState, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Forward pass keeping activations and pre-activations for backprop."""
    activations = [x]
    preacts = []
    out = x
    for layer in state.layers:
        z = out @ layer.weights.T + layer.bias
        preacts.append(z)
        out = np.maximum(z, 0.0) if layer.activation == "relu" else z
        activations.append(out)
    return activations, preacts


def logits(state: NetworkState, inputs) -> np.ndarray:
    x = as_batch(state, inputs)
    out = x
    for layer in state.layers:
        out = apply_layer(layer, out)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(state: NetworkState, inputs) -> np.ndarray:
    """Class probabilities, one row per sample, rows summing to 1."""
    return _softmax(logits(state, inputs))


def _check_labels(labels, label_count: int, n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise ShapeError(f"labels must be a vector of length {n}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValidationError("labels must be integers")
    if n == 0:
        raise ValidationError("need at least one sample")
    if y.min() < 0 or y.max() >= label_count:
        raise ValidationError(f"labels must lie in [0, {label_count})")
    return y.astype(np.int64)


def loss_and_grad(state: NetworkState, inputs, labels) -> tuple[float, Gradients]:
    """Mean softmax cross-entropy and its gradient for every parameter.

    Gradients are populated for frozen groups too; freezing is applied at
    update time.
    """
    x = as_batch(state, inputs)
    n = x.shape[0]
    y = _check_labels(labels, state.label_count, n)
    activations, preacts = _trace(state, x)
    z = preacts[-1]
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1)) + z.max(axis=1)
    loss = float(np.mean(logsumexp - z[np.arange(n), y]))

    delta = _softmax(z)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_w: list[np.ndarray] = [None] * len(state.layers)
    grad_b: list[np.ndarray] = [None] * len(state.layers)
    for k in range(len(state.layers) - 1, -1, -1):
        grad_w[k] = delta.T @ activations[k]
        grad_b[k] = delta.sum(axis=0)
        if k:
            upstream = delta @ state.layers[k].weights
            if state.layers[k - 1].activation == "relu":
                upstream = upstream * (preacts[k - 1] > 0.0)
            delta = upstream
    return loss, Gradients(grad_w, grad_b)


def zero_velocity(state: NetworkState) -> Gradients:
    return Gradients(
        [np.zeros_like(layer.weights) for layer in state.layers],
        [np.zeros_like(layer.bias) for layer in state.layers],
    )


def _check_same_shapes(state: NetworkState, grads: Gradients, name: str) -> None:
    if len(grads.weights) != len(state.layers) or len(grads.biases) != len(state.layers):
        raise ShapeError(f"{name} layer count does not match the network")
    for layer, gw, gb in zip(state.layers, grads.weights, grads.biases):
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ShapeError(f"{name} shapes do not match the network parameters")


def sgd_update(
    state: NetworkState, grads: Gradients, velocity: Gradients, config: TrainConfig
) -> tuple[NetworkState, Gradients]:
    """One momentum-SGD step with per-group learning rates.

    Frozen groups keep their parameter arrays untouched (bit-identical); their
    velocity follows the same recursion with a zero learning rate.
    """
    _check_same_shapes(state, grads, "gradients")
    _check_same_shapes(state, velocity, "velocity")
    new_layers, new_vw, new_vb = [], [], []
    for layer, gw, gb, vw, vb in zip(
        state.layers, grads.weights, grads.biases, velocity.weights, velocity.biases
    ):
        frozen = layer.group in config.frozen_groups
        if frozen:
            lr = 0.0
        elif layer.group == CLASSIFICATION:
            lr = config.base_lr * config.classifier_lr_multiplier
        else:
            lr = config.base_lr
        nvw = config.momentum * vw - lr * gw
        nvb = config.momentum * vb - lr * gb
        if frozen:
            new_layers.append(layer)
        else:
            weights = layer.weights + nvw
            bias = layer.bias + nvb
            if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
                raise TrainingDiverged("parameter update produced non-finite values")
            new_layers.append(Layer(weights, bias, layer.activation, layer.group))
        new_vw.append(nvw)
        new_vb.append(nvb)
    return NetworkState(new_layers, state.label_count, state.seed), Gradients(new_vw, new_vb)


def replace_head(state: NetworkState, new_label_count: int, init_seed: int) -> NetworkState:
    """Reinitialize every classification layer; the last gets the new width.

    Representation layers are carried over untouched. New weights are Gaussian
    with std 0.01, biases zero, so the fresh head starts near-uniform.
    """
    if new_label_count < 2:
        raise ValidationError("new_label_count must be >= 2")
    rng = np.random.default_rng(init_seed)
    last = len(state.layers) - 1
    layers = []
    for i, layer in enumerate(state.layers):
        if layer.group != CLASSIFICATION:
            layers.append(layer)
            continue
        out_dim = new_label_count if i == last else layer.weights.shape[0]
        weights = rng.normal(0.0, 0.01, size=(out_dim, layer.weights.shape[1]))
        layers.append(Layer(weights, np.zeros(out_dim), layer.activation, layer.group))
    return NetworkState(layers, new_label_count, state.seed)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    elapsed_ms: float


def train(
    state: NetworkState, features, labels, config: TrainConfig
) -> tuple[NetworkState, list[EpochStats]]:
    """Epoch loop: seeded shuffling, mini-batches, last partial batch kept."""
    x = as_batch(state, features)
    n = x.shape[0]
    y = _check_labels(labels, state.label_count, n)
    rng = np.random.default_rng(config.seed)
    velocity = zero_velocity(state)
    history = []
    for epoch in range(config.epochs):
        start_time = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grad(state, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"training diverged at epoch {epoch} (loss={loss})")
            state, velocity = sgd_update(state, grads, velocity, config)
            total += loss * len(idx)
        elapsed_ms = (time.perf_counter() - start_time) * 1e3
        history.append(EpochStats(epoch, total / n, elapsed_ms))
    return state, history


def predict(state: NetworkState, inputs) -> np.ndarray:
    return forward(state, inputs).argmax(axis=1)


def accuracy(state: NetworkState, inputs, labels) -> float:
    y = np.asarray(labels)
    return float(np.mean(predict(state, inputs) == y))


def save_checkpoint(state: NetworkState, path) -> None:
    fields: list[tuple[str, object]] = [
        ("label_count", state.label_count),
        ("seed", state.seed),
    ]
    arrays = []
    total = 0
    for layer in state.layers:
        spec = layer.spec
        fields.append(("layer", f"{spec.input_dim} {spec.output_dim} {spec.activation} {spec.group}"))
        arrays.extend([layer.weights, layer.bias])
        total += layer.weights.size + layer.bias.size
    fields.append(("params", total))
    write_artifact(path, "checkpoint", fields, arrays)


def load_checkpoint(path) -> NetworkState:
    pairs, blob = read_artifact(path, "checkpoint")
    label_count = int(manifest_value(pairs, "label_count", path))
    seed = int(manifest_value(pairs, "seed", path))
    specs = []
    for line in manifest_values(pairs, "layer"):
        in_dim, out_dim, activation, group = line.split()
        specs.append(LayerSpec(int(in_dim), int(out_dim), activation, group))
    validate_layer_specs(specs)
    total = int(manifest_value(pairs, "params", path))
    data = np.frombuffer(blob, dtype="<f8")
    if data.size != total or total != sum(s.input_dim * s.output_dim + s.output_dim for s in specs):
        raise ValidationError(f"{path}: parameter blob size does not match the manifest")
    layers = []
    offset = 0
    for spec in specs:
        w_size = spec.output_dim * spec.input_dim
        weights = data[offset:offset + w_size].reshape(spec.output_dim, spec.input_dim).copy()
        offset += w_size
        bias = data[offset:offset + spec.output_dim].copy()
        offset += spec.output_dim
        layers.append(Layer(weights, bias, spec.activation, spec.group))
    if label_count != specs[-1].output_dim:
        raise ValidationError(f"{path}: label_count does not match the final layer width")
    return NetworkState(layers, label_count, seed)
