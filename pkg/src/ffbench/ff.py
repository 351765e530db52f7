"""Layer-local training with goodness losses.

Each dense+ReLU layer is trained on its own: it scores a batch through a
goodness statistic of its activations, pushes goodness above a threshold
theta for positive inputs and below it for negative inputs, and updates its
weights from the closed-form gradient of that objective. No gradient ever
crosses a layer boundary; layer inputs are treated as constants.

Between layers, activations are length-normalized, so a deeper layer sees
only the direction of the activity pattern, not how strong it was. The first
layer consumes the raw input. Goodness is always computed on the raw (not
normalized) activations.

Within one batch the layers update greedily in order: layer i steps first,
then its recomputed output feeds layer i+1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    NORM_EPS,
    AdamState,
    Rng,
    ShapeError,
    adam_step,
    as_tensor,
    l2_normalize,
    sigmoid,
    softplus,
)
from .tasks import TaskSpec, apply_task, make_task_batch, make_unsupervised_batch, sample_task_labels

GOODNESS_MODES = ("mean_sq", "sum_sq", "l2norm")
DEFAULT_THETA = 2.0


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def he_init(fan_in: int, fan_out: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """ReLU-appropriate init: N(0, 2/fan_in) weights, zero bias."""
    weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    return weight, np.zeros(fan_out)


def init_params(dims: list[int], rng: Rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Initial (weight, bias) for each consecutive dim pair, drawn in order.

    Both trainer families build their shared layers through this one path, so
    equal seeds give them bitwise-equal starting weights.
    """
    return [he_init(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]


class FFLayer:
    """One dense+ReLU layer with its own optimizer state."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = as_tensor(weight)
        self.bias = as_tensor(bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"bad layer shapes: weight {self.weight.shape}, bias {self.bias.shape}"
            )
        self.adam_w: AdamState | None = None
        self.adam_b: AdamState | None = None

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    def init_adam(self, learning_rate: float) -> None:
        self.adam_w = AdamState.for_param(self.weight, learning_rate)
        self.adam_b = AdamState.for_param(self.bias, learning_rate)

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeError(f"input {x.shape} does not match fan_in {self.fan_in}")
        return x @ self.weight + self.bias


def layer_forward(layer: FFLayer, x: np.ndarray) -> np.ndarray:
    """ReLU(x . W + b)."""
    return np.maximum(layer.pre_activation(x), 0.0)


def goodness(activations: np.ndarray, mode: str = "mean_sq"):
    """Scalar activity score per sample from post-ReLU activations.

    mean_sq: mean of squared units (width-independent scale)
    sum_sq:  sum of squared units
    l2norm:  euclidean norm

    A 1-D vector gives a float; a [batch, width] matrix gives a [batch] array.
    """
    h = as_tensor(activations)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    if h.ndim != 2 or h.shape[1] == 0:
        raise ShapeError(f"activations must be a non-empty vector or matrix, got {h.shape}")
    sq = np.einsum("ij,ij->i", h, h)
    if mode == "mean_sq":
        g = sq / h.shape[1]
    elif mode == "sum_sq":
        g = sq
    elif mode == "l2norm":
        g = np.sqrt(sq)
    else:
        raise ValueError(f"unknown goodness_mode {mode!r}; known: {', '.join(GOODNESS_MODES)}")
    return float(g[0]) if single else g


def goodness_grad(h: np.ndarray, mode: str) -> np.ndarray:
    """d goodness / d activations, rowwise on a [batch, width] matrix."""
    if mode == "mean_sq":
        return 2.0 * h / h.shape[1]
    if mode == "sum_sq":
        return 2.0 * h
    if mode == "l2norm":
        norms = np.sqrt(np.einsum("ij,ij->i", h, h))
        return h / np.maximum(norms, NORM_EPS)[:, None]
    raise ValueError(f"unknown goodness_mode {mode!r}; known: {', '.join(GOODNESS_MODES)}")


def layer_loss(g_pos, g_neg, theta: float) -> float:
    """softplus(theta - g_pos) + softplus(g_neg - theta), batch means.

    Drives positive goodness above theta and negative goodness below it;
    sigmoid(g - theta) is then the layer's probability that a sample is
    positive. Scalar or array goodness accepted.
    """
    pos_term = np.mean(softplus(theta - np.asarray(g_pos, dtype=np.float64)))
    neg_term = np.mean(softplus(np.asarray(g_neg, dtype=np.float64) - theta))
    return float(pos_term + neg_term)


def layer_gradients(
    layer: FFLayer,
    x_pos: np.ndarray,
    x_neg: np.ndarray,
    theta: float,
    mode: str,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and its exact gradient w.r.t. this layer's weight and bias.

    Inputs are constants here: nothing flows back to x. Exposed separately
    from the update so the gradient can be checked against finite differences.
    """
    grad_w = np.zeros_like(layer.weight)
    grad_b = np.zeros_like(layer.bias)
    loss = 0.0
    for x, positive in ((x_pos, True), (x_neg, False)):
        z = layer.pre_activation(x)
        h = np.maximum(z, 0.0)
        g = goodness(h, mode)
        n = x.shape[0]
        if positive:
            loss += float(np.mean(softplus(theta - g)))
            dloss_dg = -sigmoid(theta - g) / n
        else:
            loss += float(np.mean(softplus(g - theta)))
            dloss_dg = sigmoid(g - theta) / n
        dz = dloss_dg[:, None] * goodness_grad(h, mode) * (z > 0.0)
        grad_w += x.T @ dz
        grad_b += dz.sum(axis=0)
    return loss, grad_w, grad_b


def layer_local_update(
    layer: FFLayer,
    x_pos: np.ndarray,
    x_neg: np.ndarray,
    theta: float,
    mode: str,
) -> float:
    """One Adam step on this layer alone; returns the pre-update loss."""
    loss, grad_w, grad_b = layer_gradients(layer, x_pos, x_neg, theta, mode)
    if layer.adam_w is None or layer.adam_b is None:
        raise RuntimeError("layer has no optimizer state; call init_adam first")
    adam_step(layer.weight, grad_w, layer.adam_w)
    adam_step(layer.bias, grad_b, layer.adam_b)
    return loss


class FFNetwork:
    """Stack of locally trained layers plus the goodness settings they share."""

    def __init__(self, layers: list[FFLayer], goodness_mode: str = "mean_sq", theta: float = DEFAULT_THETA):
        if not layers:
            raise ValueError("need at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.fan_out != b.fan_in:
                raise ShapeError(f"layer dims do not chain: {a.fan_out} feeds {b.fan_in}")
        if goodness_mode not in GOODNESS_MODES:
            raise ValueError(f"unknown goodness_mode {goodness_mode!r}")
        if not theta > 0:
            raise ValueError(f"theta must be positive, got {theta}")
        self.layers = layers
        self.goodness_mode = goodness_mode
        self.theta = theta

    @classmethod
    def build(
        cls,
        input_dim: int,
        widths: list[int],
        rng: Rng,
        goodness_mode: str = "mean_sq",
        theta: float = DEFAULT_THETA,
    ) -> "FFNetwork":
        params = init_params([input_dim] + list(widths), rng)
        return cls([FFLayer(w, b) for w, b in params], goodness_mode, theta)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    def forward_all(self, batch: np.ndarray) -> list[np.ndarray]:
        return ff_forward_all(self, batch)


def ff_forward_all(net: FFNetwork, batch: np.ndarray) -> list[np.ndarray]:
    """Raw activations of every layer on a flat batch.

    Layer 0 consumes the raw input; layer i>0 consumes the length-normalized
    activations of layer i-1. The returned activations are the raw ones, as
    goodness needs them.
    """
    activations = []
    x = as_tensor(batch)
    for layer in net.layers:
        h = layer_forward(layer, x)
        activations.append(h)
        x = l2_normalize(h)
    return activations


@dataclass
class FFTrainConfig:
    epochs: int = 60
    batch_size: int = 128
    learning_rate: float = 0.0001
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def _greedy_batch_update(net: FFNetwork, pos: np.ndarray, neg: np.ndarray) -> list[float]:
    """Update every layer once, in order, on one positive/negative batch.

    Layer i steps first; its output is then recomputed with the *updated*
    weights before feeding layer i+1. Returns pre-update losses per layer.
    """
    losses = []
    x_pos, x_neg = pos, neg
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        losses.append(layer_local_update(layer, x_pos, x_neg, net.theta, net.goodness_mode))
        if i != last:
            x_pos = l2_normalize(layer_forward(layer, x_pos))
            x_neg = l2_normalize(layer_forward(layer, x_neg))
    return losses


def _run_greedy_training(net, count, cfg, batch_fn, rng, on_epoch):
    """Shared epoch/batch loop for both supervised and label-free training."""
    log: list[dict] = []
    if cfg.epochs == 0:
        return net, log
    for layer in net.layers:
        layer.init_adam(cfg.learning_rate)
    shuffle_rng = rng.child("shuffle")
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(count)
        sums = np.zeros(len(net.layers))
        n_batches = 0
        for b, start in enumerate(range(0, count, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            pos, neg = batch_fn(idx)
            losses = _greedy_batch_update(net, pos, neg)
            if not np.all(np.isfinite(losses)):
                bad = int(np.flatnonzero(~np.isfinite(losses))[0])
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {b} layer {bad}"
                )
            sums += losses
            n_batches += 1
        record = {"epoch": epoch, "layer_losses": (sums / n_batches).tolist()}
        log.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return net, log


def train_ff(net: FFNetwork, dataset, task: TaskSpec, cfg: FFTrainConfig, on_epoch=None):
    """Greedy layer-local training on a task's positive/negative pairs.

    Mutates net in place and returns (net, per-epoch log). Fresh optimizer
    state is created at the start (checkpoints do not carry it). Randomness is
    split into named substreams of cfg.seed: "shuffle" for batch order, "task"
    for task-label draws, "negative" for wrong-label draws, so changing one
    phase leaves the others' draws untouched.
    """
    rng = Rng(cfg.seed)
    task_rng = rng.child("task")
    neg_rng = rng.child("negative")
    images, labels = dataset.images, dataset.labels

    def batch_fn(idx):
        batch_labels = labels[idx] if task.name == "classify" else None
        pos, neg, _ = make_task_batch(images[idx], task, task_rng, batch_labels, neg_rng)
        return pos, neg

    return _run_greedy_training(net, dataset.count, cfg, batch_fn, rng, on_epoch)


def train_unsupervised_ff(net: FFNetwork, dataset, cfg: FFTrainConfig, task: TaskSpec | None = None, on_epoch=None):
    """Label-free variant: positives are raw images, negatives are mask-blended
    hybrids of two images. Same greedy loop, no label embedding anywhere.

    Passing a pretext task uses it purely as augmentation: each batch is
    transformed under fresh random task labels before the positive/negative
    split, and the labels are discarded.
    """
    rng = Rng(cfg.seed)
    neg_rng = rng.child("negative")
    task_rng = rng.child("task")
    images = dataset.images
    augment = task is not None and task.name != "classify"

    def batch_fn(idx):
        batch = images[idx]
        if augment:
            batch = apply_task(batch, sample_task_labels(len(idx), task, task_rng), task)
        return make_unsupervised_batch(batch, neg_rng)

    return _run_greedy_training(net, dataset.count, cfg, batch_fn, rng, on_epoch)
