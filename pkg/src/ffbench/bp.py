"""Backprop baselines on the identical layer stack.

Three loss variants, all trained end-to-end with full gradient flow:

  cross_entropy   extra linear head on the last (normalized) activation;
                  inputs carry no embedded label, the head predicts the task
  goodness_last   the goodness objective of the final layer only, with
                  positive/negative embedded batches exactly as the
                  layer-local trainer uses
  goodness_all    sum of every layer's goodness objective

The inter-layer length normalization is kept so the architecture matches the
layer-local trainer exactly, and its Jacobian is differentiated exactly: for
u = v / max(|v|, eps), the pullback of gu is gu/r - v (v.gu)/r^3 when |v| is
above eps, and gu/eps on the (linear) floor branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    NORM_EPS,
    Rng,
    ShapeError,
    adam_step,
    as_tensor,
    l2_normalize,
    log_softmax,
    sigmoid,
    softplus,
)
from .ff import (
    DEFAULT_THETA,
    GOODNESS_MODES,
    DivergenceError,
    FFLayer,
    FFTrainConfig,
    goodness,
    goodness_grad,
    init_params,
)
from .tasks import TaskSpec, apply_task, make_task_batch, sample_task_labels

BP_VARIANTS = ("cross_entropy", "goodness_last", "goodness_all")

BPTrainConfig = FFTrainConfig


def norm_backward(v: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Exact vector-Jacobian product of rowwise u = v / max(|v|, eps)."""
    norms = np.sqrt(np.einsum("ij,ij->i", v, v))
    r = np.maximum(norms, NORM_EPS)
    grad_v = grad_u / r[:, None]
    scaling = norms > NORM_EPS
    if np.any(scaling):
        dot = np.einsum("ij,ij->i", v, grad_u)
        grad_v[scaling] -= v[scaling] * (dot[scaling] / r[scaling] ** 3)[:, None]
    return grad_v


class BPNetwork:
    """Dense stack (reusing the local trainer's layer type) plus loss variant."""

    def __init__(
        self,
        layers: list[FFLayer],
        loss_variant: str,
        head: FFLayer | None = None,
        goodness_mode: str = "mean_sq",
        theta: float = DEFAULT_THETA,
        normalize: bool = True,
    ):
        if loss_variant not in BP_VARIANTS:
            raise ValueError(f"unknown loss_variant {loss_variant!r}; known: {', '.join(BP_VARIANTS)}")
        if (head is not None) != (loss_variant == "cross_entropy"):
            raise ValueError("head must be present exactly when loss_variant is cross_entropy")
        if not layers:
            raise ValueError("need at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.fan_out != b.fan_in:
                raise ShapeError(f"layer dims do not chain: {a.fan_out} feeds {b.fan_in}")
        if head is not None and head.fan_in != layers[-1].fan_out:
            raise ShapeError(f"head fan_in {head.fan_in} does not match last layer {layers[-1].fan_out}")
        if goodness_mode not in GOODNESS_MODES:
            raise ValueError(f"unknown goodness_mode {goodness_mode!r}")
        if not theta > 0:
            raise ValueError(f"theta must be positive, got {theta}")
        self.layers = layers
        self.head = head
        self.loss_variant = loss_variant
        self.goodness_mode = goodness_mode
        self.theta = theta
        self.normalize = normalize  # ablation flag: drop the inter-layer normalization

    @classmethod
    def build(
        cls,
        input_dim: int,
        widths: list[int],
        rng: Rng,
        loss_variant: str,
        num_labels: int | None = None,
        goodness_mode: str = "mean_sq",
        theta: float = DEFAULT_THETA,
    ) -> "BPNetwork":
        """Same init path (and draw order) as the layer-local network, so equal
        seeds give equal starting layer weights; the head draws come after."""
        params = init_params([input_dim] + list(widths), rng)
        layers = [FFLayer(w, b) for w, b in params]
        head = None
        if loss_variant == "cross_entropy":
            if num_labels is None:
                raise ValueError("cross_entropy needs num_labels for the head")
            head = FFLayer(*init_params([widths[-1], num_labels], rng)[0])
        return cls(layers, loss_variant, head, goodness_mode, theta)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]


@dataclass
class BPCache:
    inputs: list[np.ndarray]  # what each layer consumed
    pre_acts: list[np.ndarray]
    activations: list[np.ndarray]  # raw, post-ReLU
    logits: np.ndarray | None = None
    head_input: np.ndarray | None = None


def bp_forward(net: BPNetwork, batch: np.ndarray):
    """Forward pass returning (activations, logits-or-goodnesses, cache).

    The layer/normalization topology is identical to the layer-local forward;
    cross_entropy additionally sends the normalized last activation through
    the head.
    """
    x = as_tensor(batch)
    cache = BPCache(inputs=[], pre_acts=[], activations=[])
    for layer in net.layers:
        cache.inputs.append(x)
        z = layer.pre_activation(x)
        h = np.maximum(z, 0.0)
        cache.pre_acts.append(z)
        cache.activations.append(h)
        x = l2_normalize(h) if net.normalize else h
    if net.loss_variant == "cross_entropy":
        cache.head_input = x
        cache.logits = net.head.pre_activation(x)
        return cache.activations, cache.logits, cache
    scores = [goodness(h, net.goodness_mode) for h in cache.activations]
    return cache.activations, scores, cache


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels outside [0, {logits.shape[1]})")
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def _stack_backward(net: BPNetwork, cache: BPCache, grad_h: list[np.ndarray], grads):
    """Descend the layer stack, consuming accumulated d loss / d activation."""
    for i in range(len(net.layers) - 1, -1, -1):
        gz = grad_h[i] * (cache.pre_acts[i] > 0.0)
        gw, gb = grads[i]
        gw += cache.inputs[i].T @ gz
        gb += gz.sum(axis=0)
        if i > 0:
            gu = gz @ net.layers[i].weight.T
            if net.normalize:
                gu = norm_backward(cache.activations[i - 1], gu)
            grad_h[i - 1] += gu


def bp_gradients(net: BPNetwork, batch: np.ndarray, target):
    """Loss and exact gradients for every parameter.

    target is the integer label array for cross_entropy, or the negative
    batch for the goodness variants (batch then being the positive one).
    Returns (loss, layer_grads, head_grads) with head_grads None unless a
    head exists. Exposed so the backward pass can be finite-difference
    checked without touching optimizer state.
    """
    grads = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]
    head_grads = None

    if net.loss_variant == "cross_entropy":
        _, logits, cache = bp_forward(net, batch)
        labels = np.asarray(target, dtype=np.int64)
        loss = cross_entropy_loss(logits, labels)
        n = logits.shape[0]
        g_logits = np.exp(log_softmax(logits))
        g_logits[np.arange(n), labels] -= 1.0
        g_logits /= n
        head_grads = (cache.head_input.T @ g_logits, g_logits.sum(axis=0))
        grad_h = [np.zeros_like(h) for h in cache.activations]
        g_head_in = g_logits @ net.head.weight.T
        grad_h[-1] = norm_backward(cache.activations[-1], g_head_in) if net.normalize else g_head_in
        _stack_backward(net, cache, grad_h, grads)
        return loss, grads, head_grads

    contributing = [len(net.layers) - 1] if net.loss_variant == "goodness_last" else list(range(len(net.layers)))
    loss = 0.0
    for x, positive in ((batch, True), (as_tensor(target), False)):
        _, scores, cache = bp_forward(net, x)
        grad_h = [np.zeros_like(h) for h in cache.activations]
        n = x.shape[0]
        for i in contributing:
            g = scores[i]
            if positive:
                loss += float(np.mean(softplus(net.theta - g)))
                dloss_dg = -sigmoid(net.theta - g) / n
            else:
                loss += float(np.mean(softplus(g - net.theta)))
                dloss_dg = sigmoid(g - net.theta) / n
            grad_h[i] += dloss_dg[:, None] * goodness_grad(cache.activations[i], net.goodness_mode)
        _stack_backward(net, cache, grad_h, grads)
    return loss, grads, None


def bp_loss(net: BPNetwork, batch: np.ndarray, target) -> float:
    """Loss only (no gradients): CE on labels, or the goodness objective."""
    if net.loss_variant == "cross_entropy":
        _, logits, _ = bp_forward(net, batch)
        return cross_entropy_loss(logits, target)
    contributing = [len(net.layers) - 1] if net.loss_variant == "goodness_last" else list(range(len(net.layers)))
    loss = 0.0
    for x, positive in ((batch, True), (as_tensor(target), False)):
        _, scores, _ = bp_forward(net, x)
        for i in contributing:
            term = softplus(net.theta - scores[i]) if positive else softplus(scores[i] - net.theta)
            loss += float(np.mean(term))
    return loss


def _all_params(net: BPNetwork) -> list[FFLayer]:
    return net.layers + ([net.head] if net.head is not None else [])


def bp_backward_and_step(net: BPNetwork, batch: np.ndarray, target) -> float:
    """One full backward pass and one Adam step on every parameter."""
    loss, grads, head_grads = bp_gradients(net, batch, target)
    for layer, (gw, gb) in zip(net.layers, grads):
        if layer.adam_w is None or layer.adam_b is None:
            raise RuntimeError("layer has no optimizer state; call init_adam first")
        adam_step(layer.weight, gw, layer.adam_w)
        adam_step(layer.bias, gb, layer.adam_b)
    if head_grads is not None:
        adam_step(net.head.weight, head_grads[0], net.head.adam_w)
        adam_step(net.head.bias, head_grads[1], net.head.adam_b)
    return loss


def train_bp(net: BPNetwork, dataset, task: TaskSpec, cfg: BPTrainConfig, on_epoch=None):
    """End-to-end training mirroring the layer-local loop's data handling.

    cross_entropy consumes label-free (but task-transformed) inputs with the
    task label as the head's target; the goodness variants consume the same
    embedded positive/negative batches the layer-local trainer sees. Uses the
    same named seed substreams ("shuffle", "task", "negative").
    """
    log: list[dict] = []
    if cfg.epochs == 0:
        return net, log
    for layer in _all_params(net):
        layer.init_adam(cfg.learning_rate)
    rng = Rng(cfg.seed)
    shuffle_rng = rng.child("shuffle")
    task_rng = rng.child("task")
    neg_rng = rng.child("negative")
    images, labels = dataset.images, dataset.labels
    n = dataset.count
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            if net.loss_variant == "cross_entropy":
                if task.name == "classify":
                    task_labels = labels[idx]
                    flat = images[idx].reshape(len(idx), -1)
                else:
                    task_labels = sample_task_labels(len(idx), task, task_rng)
                    flat = apply_task(images[idx], task_labels, task).reshape(len(idx), -1)
                loss = bp_backward_and_step(net, flat, task_labels)
            else:
                batch_labels = labels[idx] if task.name == "classify" else None
                pos, neg, _ = make_task_batch(images[idx], task, task_rng, batch_labels, neg_rng)
                loss = bp_backward_and_step(net, pos, neg)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch} batch {b}")
            total += loss
            n_batches += 1
        record = {"epoch": epoch, "loss": total / n_batches}
        log.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return net, log
