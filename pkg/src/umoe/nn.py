"""Minimal feed-forward networks with weighted mini-batch SGD.

ReLU hidden layers; the output layer is linear (regression) or softmax
(classification and gating). Training minimizes, per batch,

    sum_i w_i * loss_i / sum_i w_i
    + elastic_lambda * (elastic_alpha * sum|W| + (1 - elastic_alpha) * sum W^2)

with per-instance weights w_i, plain SGD updates and unregularized
biases. Normalizing by the batch weight keeps the effective learning
rate stable: rescaling all weights by a common constant leaves the
parameter trajectory unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, TrainingError
from .validation import check_count, check_positive, check_unit_interval

# Probability floor applied inside logs so cross-entropy never hits log(0).
PROB_FLOOR = 1e-12

OUTPUT_KINDS = ("linear", "softmax")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one weighted SGD run."""

    learning_rate: float = 0.01
    epochs: int = 150
    batch_size: int = 16
    elastic_alpha: float = 0.5
    elastic_lambda: float = 0.002
    seed: int = 0

    def __post_init__(self) -> None:
        check_positive(self.learning_rate, "learning_rate")
        check_count(self.epochs, "epochs", 1)
        check_count(self.batch_size, "batch_size", 1)
        check_unit_interval(self.elastic_alpha, "elastic_alpha")
        if self.elastic_lambda < 0:
            raise InputError(f"elastic_lambda must be >= 0, got {self.elastic_lambda}")


@dataclass
class Mlp:
    """Fully connected network parameters. Weight matrices are (fan_out, fan_in)."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output,
        )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]


def init_mlp(layer_sizes, output: str, seed: int) -> Mlp:
    """He-style scaled uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise InputError("need at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise InputError(f"all layer sizes must be >= 1, got {sizes}")
    if output not in OUTPUT_KINDS:
        raise InputError(f"output must be one of {OUTPUT_KINDS}, got {output!r}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases, output)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(mlp: Mlp, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    activations = [X]
    pre = []
    a = X
    last = len(mlp.weights) - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        pre.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
        elif mlp.output == "softmax":
            a = softmax_rows(z)
        else:
            a = z
        activations.append(a)
    return activations, pre


def forward(mlp: Mlp, x) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != mlp.n_inputs:
        raise InputError(f"input has {arr.shape[1]} features, network expects {mlp.n_inputs}")
    out = _forward_cached(mlp, arr)[0][-1]
    return out[0] if single else out


def loss_value(output, target, task: str) -> float:
    """Loss of a single prediction: squared error or floored cross-entropy."""
    out = np.atleast_1d(np.asarray(output, dtype=float))
    if task == "regression":
        return float(np.sum((out - np.atleast_1d(np.asarray(target, dtype=float))) ** 2))
    if task == "classification":
        return float(-math.log(max(out[int(target)], PROB_FLOOR)))
    raise InputError(f"unknown task {task!r}")


def _per_sample_losses(outputs: np.ndarray, y: np.ndarray, output_kind: str) -> np.ndarray:
    if output_kind == "linear":
        targets = y.reshape(outputs.shape[0], -1)
        return np.sum((outputs - targets) ** 2, axis=1)
    picked = outputs[np.arange(outputs.shape[0]), y.astype(int)]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def _output_delta(outputs: np.ndarray, y: np.ndarray, output_kind: str) -> np.ndarray:
    if output_kind == "linear":
        return 2.0 * (outputs - y.reshape(outputs.shape[0], -1))
    delta = outputs.copy()
    delta[np.arange(outputs.shape[0]), y.astype(int)] -= 1.0
    return delta


def _elastic_grad(w: np.ndarray, alpha: float, lam: float) -> np.ndarray:
    return lam * (alpha * np.sign(w) + 2.0 * (1.0 - alpha) * w)


def elastic_penalty(mlp: Mlp, alpha: float, lam: float) -> float:
    if lam == 0.0:
        return 0.0
    l1 = sum(float(np.abs(w).sum()) for w in mlp.weights)
    l2 = sum(float((w * w).sum()) for w in mlp.weights)
    return lam * (alpha * l1 + (1.0 - alpha) * l2)


def backward_from_delta(
    mlp: Mlp, activations: list[np.ndarray], pre: list[np.ndarray], delta_out: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Parameter gradients given the loss gradient at the output pre-activations."""
    grad_w = [np.empty(0)] * len(mlp.weights)
    grad_b = [np.empty(0)] * len(mlp.biases)
    delta = delta_out
    for l in range(len(mlp.weights) - 1, -1, -1):
        grad_w[l] = delta.T @ activations[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ mlp.weights[l]) * (pre[l - 1] > 0.0)
    return grad_w, grad_b


def weighted_batch_loss(
    mlp: Mlp, X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray,
    elastic_alpha: float, elastic_lambda: float,
) -> float:
    """The exact objective whose gradient :func:`weighted_batch_grads` returns."""
    outputs = _forward_cached(mlp, X)[0][-1]
    losses = _per_sample_losses(outputs, y, mlp.output)
    data = float(np.dot(sample_weight, losses) / sample_weight.sum())
    return data + elastic_penalty(mlp, elastic_alpha, elastic_lambda)


def weighted_batch_grads(
    mlp: Mlp, X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray,
    elastic_alpha: float, elastic_lambda: float,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Weighted data loss of the batch and the full objective's parameter gradients."""
    activations, pre = _forward_cached(mlp, X)
    outputs = activations[-1]
    total_weight = float(sample_weight.sum())
    losses = _per_sample_losses(outputs, y, mlp.output)
    data_loss = float(np.dot(sample_weight, losses) / total_weight)
    scale = (sample_weight / total_weight)[:, None]
    grad_w, grad_b = backward_from_delta(mlp, activations, pre, _output_delta(outputs, y, mlp.output) * scale)
    if elastic_lambda > 0.0:
        for l, w in enumerate(mlp.weights):
            grad_w[l] += _elastic_grad(w, elastic_alpha, elastic_lambda)
    return data_loss, grad_w, grad_b


def sgd_step(mlp: Mlp, X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray, config: TrainConfig) -> float:
    """One in-place parameter update on a batch; returns the weighted data loss.

    Minimizes the same objective as :func:`weighted_batch_grads` derives;
    the elastic term is applied directly to the parameters to save work.
    """
    activations, pre = _forward_cached(mlp, X)
    outputs = activations[-1]
    total_weight = float(sample_weight.sum())
    losses = _per_sample_losses(outputs, y, mlp.output)
    data_loss = float(np.dot(sample_weight, losses) / total_weight)
    if not math.isfinite(data_loss):
        return data_loss
    delta = _output_delta(outputs, y, mlp.output) * (sample_weight / total_weight)[:, None]
    lr = config.learning_rate
    lam = config.elastic_lambda
    l1_step = lr * lam * config.elastic_alpha
    l2_scale = 1.0 - lr * lam * 2.0 * (1.0 - config.elastic_alpha)
    for l in range(len(mlp.weights) - 1, -1, -1):
        w = mlp.weights[l]
        grad_w = delta.T @ activations[l]
        grad_b = delta.sum(axis=0)
        if l > 0:
            # propagate through the pre-update weights
            delta = (delta @ w) * (pre[l - 1] > 0.0)
        if lam > 0.0:
            w *= l2_scale
            w -= l1_step * np.sign(w)
        w -= lr * grad_w
        mlp.biases[l] -= lr * grad_b
    return data_loss


def train_weighted(
    mlp: Mlp,
    X,
    y,
    sample_weight=None,
    config: TrainConfig = TrainConfig(),
    loss_history: list[float] | None = None,
) -> Mlp:
    """Mini-batch SGD for ``config.epochs`` epochs with a seeded shuffle per epoch.

    Returns a newly trained copy; the input network is untouched. Raises
    :class:`TrainingError` naming the epoch if the loss goes non-finite.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[0] == 0:
        raise InputError("training set is empty")
    if X.shape[1] != mlp.n_inputs:
        raise InputError(f"rows have {X.shape[1]} features, network expects {mlp.n_inputs}")
    if mlp.output == "softmax":
        y = np.asarray(y, dtype=int)
        if y.min() < 0 or y.max() >= mlp.n_outputs:
            raise InputError("class labels out of range for the output layer")
    else:
        y = np.asarray(y, dtype=float)
    if sample_weight is None:
        sample_weight = np.ones(X.shape[0])
    else:
        sample_weight = np.asarray(sample_weight, dtype=float)
        if sample_weight.shape != (X.shape[0],):
            raise InputError("sample_weight length must match the number of rows")
        if np.any(sample_weight <= 0):
            raise InputError("sample weights must be positive")

    net = mlp.copy()
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        # permute once so per-batch extraction is a cheap view
        Xp, yp, wp = X[perm], y[perm], sample_weight[perm]
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            stop = start + config.batch_size
            data_loss = sgd_step(net, Xp[start:stop], yp[start:stop], wp[start:stop], config)
            if not math.isfinite(data_loss):
                raise TrainingError(f"training diverged to a non-finite loss at epoch {epoch}")
            epoch_losses.append(data_loss)
        if loss_history is not None:
            loss_history.append(float(np.mean(epoch_losses)))
    return net


def mlp_state(mlp: Mlp) -> tuple[dict[str, np.ndarray], dict]:
    """Arrays plus metadata for a versioned, round-trip-exact dump."""
    arrays = {}
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        arrays[f"w{l}"] = w
        arrays[f"b{l}"] = b
    meta = {
        "format_version": 1,
        "layer_sizes": list(mlp.layer_sizes),
        "output": mlp.output,
    }
    return arrays, meta


def mlp_from_state(arrays: dict[str, np.ndarray], meta: dict) -> Mlp:
    sizes = tuple(int(s) for s in meta["layer_sizes"])
    n_layers = len(sizes) - 1
    weights = [np.array(arrays[f"w{l}"], dtype=float) for l in range(n_layers)]
    biases = [np.array(arrays[f"b{l}"], dtype=float) for l in range(n_layers)]
    return Mlp(sizes, weights, biases, str(meta["output"]))


def save_mlp(path: str, mlp: Mlp) -> None:
    from .serialization import save_arrays

    arrays, meta = mlp_state(mlp)
    save_arrays(path, arrays, meta)


def load_mlp(path: str) -> Mlp:
    from .serialization import load_arrays

    arrays, meta = load_arrays(path)
    if meta is None or "layer_sizes" not in meta:
        raise InputError(f"{path} is not a network dump")
    return mlp_from_state(arrays, meta)
