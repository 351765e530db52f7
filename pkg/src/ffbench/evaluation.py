"""Inference and transfer evaluation.

Two ways to read a label out of a goodness-trained net:

  slow  embed each candidate label in turn, forward, average the goodness
        over a set of layers, take the argmax (one forward pass per label)
  fast  train a linear probe on frozen features: the length-normalized
        activations of the chosen layers, concatenated

Transfer quality of a pretext-pretrained net is the test accuracy of a probe
trained on TRUE class labels over features extracted from untouched images
(no label embedded). The full experiment pipeline (pretrain, freeze, probe,
report) lives here too.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
import json

import numpy as np

from .bp import BPNetwork, BPTrainConfig, train_bp
from .config import ExperimentConfig
from .core import AdamState, Rng, adam_step, as_tensor, l2_normalize, log_softmax
from .ff import FFNetwork, FFTrainConfig, ff_forward_all, goodness, train_ff, train_unsupervised_ff
from .tasks import TaskSpec, apply_task, embed_label, embed_neutral, sample_task_labels, task_spec

DEFAULT_EVAL_BATCH = 1024


def default_layer_set(n_layers: int) -> list[int]:
    """Every layer except the first; the first alone for a 1-layer net."""
    return [0] if n_layers == 1 else list(range(1, n_layers))


def _check_layer_set(layer_set: list[int], n_layers: int) -> list[int]:
    if not layer_set:
        raise ValueError("layer_set must be non-empty")
    for i in layer_set:
        if not 0 <= i < n_layers:
            raise IndexError(f"layer index {i} outside [0, {n_layers})")
    return list(layer_set)


def goodness_scores(
    net,
    flat: np.ndarray,
    num_labels: int,
    layer_set: list[int] | None = None,
    batch_size: int = DEFAULT_EVAL_BATCH,
) -> np.ndarray:
    """[count, num_labels] matrix: mean goodness over layer_set per candidate.

    Works on any net exposing .layers and .goodness_mode.
    """
    flat = as_tensor(flat)
    if layer_set is None:
        layer_set = default_layer_set(len(net.layers))
    layer_set = _check_layer_set(layer_set, len(net.layers))
    n = flat.shape[0]
    scores = np.zeros((n, num_labels))
    for start in range(0, n, batch_size):
        block = flat[start : start + batch_size]
        for label in range(num_labels):
            embedded = embed_label(block, np.full(len(block), label, dtype=np.int64), num_labels)
            acts = ff_forward_all(net, embedded)
            per_layer = [goodness(acts[i], net.goodness_mode) for i in layer_set]
            scores[start : start + batch_size, label] = np.mean(per_layer, axis=0)
    return scores


def predict_slow(
    net,
    flat: np.ndarray,
    num_labels: int,
    layer_set: list[int] | None = None,
    batch_size: int = DEFAULT_EVAL_BATCH,
) -> np.ndarray:
    """Goodness-scan prediction; ties resolve to the lowest label index."""
    return np.argmax(goodness_scores(net, flat, num_labels, layer_set, batch_size), axis=1)


def predict_head(net: BPNetwork, flat: np.ndarray, batch_size: int = DEFAULT_EVAL_BATCH) -> np.ndarray:
    """Argmax of the cross-entropy head's logits."""
    if net.head is None:
        raise ValueError("net has no classification head")
    flat = as_tensor(flat)
    out = np.empty(flat.shape[0], dtype=np.int64)
    for start in range(0, flat.shape[0], batch_size):
        block = flat[start : start + batch_size]
        x = block
        for layer in net.layers:
            h = np.maximum(layer.pre_activation(x), 0.0)
            x = l2_normalize(h) if net.normalize else h
        out[start : start + batch_size] = np.argmax(net.head.pre_activation(x), axis=1)
    return out


def extract_features(
    net,
    flat: np.ndarray,
    layer_set: list[int] | None = None,
    label_mode: str | int | None = "none",
    num_labels: int | None = None,
    normalize: bool = True,
    batch_size: int = DEFAULT_EVAL_BATCH,
) -> np.ndarray:
    """Frozen features: concatenated activations of layer_set, in layer order.

    label_mode picks what sits in the label slots before the forward pass:
    "none"/None leaves the pixels untouched, "neutral" writes 1/num_labels
    everywhere, an integer embeds that one-hot label. Activations are
    length-normalized per layer by default (they are what deeper layers
    consume); normalize=False exports the raw ones.
    """
    flat = as_tensor(flat)
    if layer_set is None:
        layer_set = default_layer_set(len(net.layers))
    layer_set = _check_layer_set(layer_set, len(net.layers))
    if label_mode not in (None, "none") and num_labels is None:
        raise ValueError("num_labels is required unless label_mode is none")
    chunks = []
    for start in range(0, flat.shape[0], batch_size):
        block = flat[start : start + batch_size]
        if label_mode in (None, "none"):
            pass
        elif label_mode == "neutral":
            block = embed_neutral(block, num_labels)
        elif isinstance(label_mode, (int, np.integer)):
            block = embed_label(block, np.full(len(block), int(label_mode), dtype=np.int64), num_labels)
        else:
            raise ValueError(f"unknown label_mode {label_mode!r}")
        acts = ff_forward_all(net, block)
        parts = [l2_normalize(acts[i]) if normalize else acts[i] for i in layer_set]
        chunks.append(np.concatenate(parts, axis=1))
    return np.concatenate(chunks, axis=0)


def accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    return float(np.mean(predicted == truth))


@dataclass
class LinearProbe:
    """Softmax classifier over frozen features."""

    weight: np.ndarray  # [feature_dim, num_classes]
    bias: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return as_tensor(features) @ self.weight + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


def train_linear_probe(
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int = 100,
    learning_rate: float = 0.0001,
    batch_size: int = 128,
    rng: Rng | None = None,
    num_classes: int | None = None,
) -> tuple[LinearProbe, list[float]]:
    """Adam-trained softmax probe; returns (probe, train-accuracy-per-epoch).

    Features are never modified; the probe starts at zero (uniform logits),
    so epochs=0 yields chance-level behavior.
    """
    features = as_tensor(features)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} feature rows")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise ValueError("labels are degenerate: fewer than 2 distinct classes")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")
    probe = LinearProbe(np.zeros((features.shape[1], num_classes)), np.zeros(num_classes))
    if epochs == 0:
        return probe, []
    rng = rng or Rng(0).child("probe")
    adam_w = AdamState.for_param(probe.weight, learning_rate)
    adam_b = AdamState.for_param(probe.bias, learning_rate)
    curve = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            x, y = features[idx], labels[idx]
            g_logits = np.exp(log_softmax(probe.logits(x)))
            g_logits[np.arange(len(y)), y] -= 1.0
            g_logits /= len(y)
            adam_step(probe.weight, x.T @ g_logits, adam_w)
            adam_step(probe.bias, g_logits.sum(axis=0), adam_b)
        curve.append(accuracy(probe.predict(features), labels))
    return probe, curve


def per_layer_accuracy(
    net,
    flat: np.ndarray,
    labels: np.ndarray,
    num_labels: int,
    batch_size: int = DEFAULT_EVAL_BATCH,
) -> list[float]:
    """Slow-method accuracy using each layer's goodness alone."""
    return [
        accuracy(predict_slow(net, flat, num_labels, [i], batch_size), labels)
        for i in range(len(net.layers))
    ]


@dataclass
class EvalReport:
    """Everything one experiment reports; accuracies are fractions in [0, 1]."""

    dataset: str
    task: str
    trainer: str
    seed: int
    task_accuracy_slow: float | None = None  # goodness scan on the pretraining task
    task_accuracy_fast: float | None = None  # head argmax (CE) or task-label probe
    transfer_accuracy: float | None = None  # class-label probe on frozen features
    per_layer_accuracy: list[float] | None = None
    curves: list[dict] = field(default_factory=list)  # {epoch, split, metric, value}

    def __post_init__(self):
        for name in ("task_accuracy_slow", "task_accuracy_fast", "transfer_accuracy"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {v}")
        if self.per_layer_accuracy is not None:
            for v in self.per_layer_accuracy:
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"per-layer accuracy outside [0, 1]: {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path | str) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def curves_to_csv(curves: list[dict], path: Path | str) -> None:
    """Per-epoch curve rows as CSV: epoch,split,metric,value."""
    lines = ["epoch,split,metric,value"]
    for row in curves:
        lines.append(f"{row['epoch']},{row['split']},{row['metric']},{row['value']:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Experiment pipeline
# ---------------------------------------------------------------------------


def _limit(ds, n: int):
    from .datasets import ImageDataset

    return ImageDataset(ds.images[:n], ds.labels[:n], ds.num_classes, ds.name, ds.split)


def prepare_datasets(cfg: ExperimentConfig, train_ds=None, test_ds=None):
    """Load (if not injected), subset classes, then cut train to the first N."""
    from . import datasets as dsets

    if train_ds is None:
        train_ds = dsets.load_dataset(cfg.dataset, "train")
    if test_ds is None:
        test_ds = dsets.load_dataset(cfg.dataset, "test")
    if cfg.class_subset is not None:
        train_ds = dsets.make_subset(train_ds, cfg.class_subset)
        test_ds = dsets.make_subset(test_ds, cfg.class_subset)
    if cfg.train_limit is not None:
        train_ds = _limit(train_ds, cfg.train_limit)
    return train_ds, test_ds


BP_VARIANT_BY_TRAINER = {
    "bp_ce": "cross_entropy",
    "bp_goodness_last": "goodness_last",
    "bp_goodness_all": "goodness_all",
}


def pretrain_network(cfg: ExperimentConfig, train_ds, on_epoch=None):
    """Build (seeded init substream) and pretrain the configured network."""
    task = task_spec(cfg.task, train_ds.num_classes)
    init_rng = Rng(cfg.seed).child("init")
    train_cfg = FFTrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed)
    input_dim = train_ds.flat_dim
    if cfg.trainer in ("ff", "ff_unsupervised"):
        net = FFNetwork.build(input_dim, cfg.widths, init_rng, cfg.goodness_mode, cfg.theta)
        if cfg.trainer == "ff":
            _, log = train_ff(net, train_ds, task, train_cfg, on_epoch)
        else:
            _, log = train_unsupervised_ff(net, train_ds, train_cfg, task, on_epoch)
        return net, log
    variant = BP_VARIANT_BY_TRAINER[cfg.trainer]
    net = BPNetwork.build(
        input_dim,
        cfg.widths,
        init_rng,
        variant,
        num_labels=task.num_labels if variant == "cross_entropy" else None,
        goodness_mode=cfg.goodness_mode,
        theta=cfg.theta,
    )
    net.normalize = cfg.bp_normalize
    _, log = train_bp(net, train_ds, task, train_cfg, on_epoch)
    return net, log


def evaluate_network(cfg: ExperimentConfig, net, train_ds, test_ds) -> EvalReport:
    """Freeze, probe, and score a pretrained network.

    Randomness here uses the "eval" substream for task-label draws on the
    evaluation splits, and "probe"/"probe_task" for probe batch order, so
    evaluation never perturbs training randomness.
    """
    task = task_spec(cfg.task, train_ds.num_classes)
    layer_set = cfg.eval_layer_set()
    n_layers = len(net.layers)
    layer_set = _check_layer_set([i for i in layer_set if i < n_layers] or default_layer_set(n_layers), n_layers)
    eval_task_rng = Rng(cfg.seed).child("eval").child("task")

    is_ce = isinstance(net, BPNetwork) and net.loss_variant == "cross_entropy"
    is_unsup = cfg.trainer == "ff_unsupervised"

    test_flat = test_ds.flat()
    train_flat = train_ds.flat()

    # Evaluation view of the pretraining task: transformed images + labels.
    if task.name == "classify":
        task_test_flat, task_test_labels = test_flat, test_ds.labels
    else:
        task_test_labels = sample_task_labels(test_ds.count, task, eval_task_rng)
        task_test_flat = apply_task(test_ds.images, task_test_labels, task).reshape(test_ds.count, -1)

    task_slow = None
    per_layer = None
    if not is_ce and not is_unsup:
        task_slow = accuracy(
            predict_slow(net, task_test_flat, task.num_labels, layer_set), task_test_labels
        )
        per_layer = per_layer_accuracy(net, task_test_flat, task_test_labels, task.num_labels)

    # Class-label probe on frozen features of untouched images.
    probe_kwargs = dict(
        layer_set=layer_set,
        label_mode=cfg.feature_label_mode,
        num_labels=task.num_labels,
    )
    feats_train = extract_features(net, train_flat, **probe_kwargs)
    feats_test = extract_features(net, test_flat, **probe_kwargs)
    probe, curve = train_linear_probe(
        feats_train,
        train_ds.labels,
        epochs=cfg.probe_epochs,
        learning_rate=cfg.probe_lr,
        rng=Rng(cfg.seed).child("probe"),
        num_classes=train_ds.num_classes,
    )
    transfer = accuracy(probe.predict(feats_test), test_ds.labels)
    curves = [
        {"epoch": e, "split": "train", "metric": "probe_accuracy", "value": v}
        for e, v in enumerate(curve)
    ]

    # Fast read of the pretraining task itself.
    if is_ce:
        task_fast = accuracy(predict_head(net, task_test_flat), task_test_labels)
    elif task.name == "classify":
        task_fast = transfer
    else:
        task_train_labels = sample_task_labels(train_ds.count, task, eval_task_rng)
        task_train_flat = apply_task(train_ds.images, task_train_labels, task).reshape(train_ds.count, -1)
        feats_task_train = extract_features(net, task_train_flat, **probe_kwargs)
        feats_task_test = extract_features(net, task_test_flat, **probe_kwargs)
        task_probe, _ = train_linear_probe(
            feats_task_train,
            task_train_labels,
            epochs=cfg.probe_epochs,
            learning_rate=cfg.probe_lr,
            rng=Rng(cfg.seed).child("probe_task"),
            num_classes=task.num_labels,
        )
        task_fast = accuracy(task_probe.predict(feats_task_test), task_test_labels)

    return EvalReport(
        dataset=cfg.dataset,
        task=cfg.task,
        trainer=cfg.trainer,
        seed=cfg.seed,
        task_accuracy_slow=task_slow,
        task_accuracy_fast=task_fast,
        transfer_accuracy=transfer,
        per_layer_accuracy=per_layer,
        curves=curves,
    )


def run_transfer_experiment(cfg: ExperimentConfig, train_ds=None, test_ds=None, on_epoch=None) -> EvalReport:
    """Pretrain on the task, freeze, probe on true class labels, report."""
    train_ds, test_ds = prepare_datasets(cfg, train_ds, test_ds)
    net, _ = pretrain_network(cfg, train_ds, on_epoch)
    return evaluate_network(cfg, net, train_ds, test_ds)
