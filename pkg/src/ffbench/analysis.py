"""Embedding-space analysis: activation export and an exact t-SNE.

The t-SNE here is the exact O(n^2) algorithm, not an approximation: sample
caps stay small (<= 5000), which keeps pairwise matrices cheap and avoids
approximation knobs. Output is plot-ready 2-D coordinates plus the KL
divergence trace; plotting itself is out of scope, the CSV feeds any tool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigValidationError
from .core import Rng, as_tensor
from .evaluation import extract_features, default_layer_set, _check_layer_set
from .ff import ff_forward_all

MAX_EMBED_SAMPLES = 5000


@dataclass
class Embedding2D:
    coords: np.ndarray  # [n, 2]
    labels: np.ndarray  # [n] int
    activity: np.ndarray | None = None  # [n] in [0, 1]

    def __post_init__(self):
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError(f"coords must be [n, 2], got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coords contain non-finite values")
        if self.labels.shape != (self.coords.shape[0],):
            raise ValueError("labels do not match coords")
        if self.activity is not None and self.activity.shape != (self.coords.shape[0],):
            raise ValueError("activity does not match coords")


def pairwise_sq_dists(points: np.ndarray) -> np.ndarray:
    """Squared euclidean distance matrix with an exactly-zero diagonal."""
    points = as_tensor(points)
    sq = np.einsum("ij,ij->i", points, points)
    d = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(dist_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Shannon entropy (nats) and probabilities of one Gaussian row."""
    p = np.exp(-dist_row * beta)
    total = p.sum()
    if total <= 0.0:
        return 0.0, np.zeros_like(p)
    p = p / total
    return float(np.log(total) + beta * np.dot(dist_row, p)), p


def bandwidths(
    dists: np.ndarray,
    perplexity: float,
    tol: float = 1e-5,
    max_iter: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point precisions matching the target perplexity, by bisection.

    Returns (betas, conditional probability matrix with zero diagonal). The
    entropy target is log(perplexity) in nats; the search stops within tol
    or after max_iter halvings.
    """
    n = dists.shape[0]
    target = np.log(perplexity)
    betas = np.ones(n)
    cond = np.zeros((n, n))
    idx = np.arange(n)
    for i in range(n):
        others = idx != i
        row = dists[i, others]
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        h, p = _row_entropy(row, beta)
        for _ in range(max_iter):
            if abs(h - target) <= tol:
                break
            if h > target:  # too spread out: sharpen
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = (beta + beta_lo) / 2.0
            h, p = _row_entropy(row, beta)
        betas[i] = beta
        cond[i, others] = p
    return betas, cond


def joint_probabilities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint P matrix: P = (Pc + Pc^T) / 2n, sums to 1."""
    dists = pairwise_sq_dists(points)
    _, cond = bandwidths(dists, perplexity)
    n = points.shape[0]
    return (cond + cond.T) / (2.0 * n)


def tsne(
    points: np.ndarray,
    perplexity: float = 30.0,
    iterations: int = 1000,
    rng: Rng | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Exact t-SNE to 2-D; returns (coords, per-iteration KL trace).

    Gradient descent with momentum 0.5 switching to 0.8 at iteration 250,
    early exaggeration x12 for the first 250 iterations, learning rate 200,
    init from a 1e-4-scaled Gaussian. Coordinates are mean-centered every
    iteration. Duplicate input points are jittered with 1e-10 noise so the
    bandwidth search stays well-posed.
    """
    points = as_tensor(points)
    n = points.shape[0]
    if n < 3 * perplexity:
        raise ValueError(f"need at least 3*perplexity={3 * perplexity:g} points, got {n}")
    rng = rng or Rng(0).child("tsne")

    dists = pairwise_sq_dists(points)
    off_diag = dists.copy()
    np.fill_diagonal(off_diag, np.inf)
    if np.any(off_diag == 0.0):
        points = points + 1e-10 * rng.normal(0.0, 1.0, size=points.shape)
        dists = pairwise_sq_dists(points)

    _, cond = bandwidths(dists, perplexity)
    p_true = (cond + cond.T) / (2.0 * n)
    p_true = np.maximum(p_true, 1e-12)

    exaggeration_iters = min(250, iterations)
    coords = 1e-4 * rng.normal(0.0, 1.0, size=(n, 2))
    update = np.zeros_like(coords)
    kl_history: list[float] = []

    for it in range(iterations):
        p = p_true * 12.0 if it < exaggeration_iters else p_true
        num = 1.0 / (1.0 + pairwise_sq_dists(coords))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        pqn = (p - q) * num
        grad = 4.0 * (np.diag(pqn.sum(axis=1)) - pqn) @ coords
        momentum = 0.5 if it < 250 else 0.8
        update = momentum * update - 200.0 * grad
        coords = coords + update
        coords = coords - coords.mean(axis=0)
        kl_history.append(float(np.sum(p * np.log(p / q))))
    return coords, kl_history


def export_activations(
    net,
    dataset,
    layer_set: list[int] | None = None,
    label_mode: str | int | None = "none",
    cap: int | None = None,
    rng: Rng | None = None,
    num_labels: int | None = None,
):
    """Subsample a dataset and export (features, labels, activity).

    Features are the probe features (normalized, concatenated over
    layer_set). Activity is the per-sample mean of SQUARED RAW activations
    over layer_set, min-max normalized to [0, 1] across the export; a
    degenerate export (all activities equal) maps to all zeros. The subsample
    is the rng's choice of `cap` indices in ascending order, so cap = n keeps
    the dataset order exactly.
    """
    n = dataset.count
    cap = n if cap is None else cap
    if not 1 <= cap <= n:
        raise ValueError(f"cap must be in [1, {n}], got {cap}")
    rng = rng or Rng(0).child("subsample")
    idx = np.sort(rng.permutation(n)[:cap])
    flat = dataset.flat()[idx]
    labels = dataset.labels[idx]
    nl = num_labels if num_labels is not None else dataset.num_classes
    features = extract_features(net, flat, layer_set, label_mode, num_labels=nl)

    layer_ids = _check_layer_set(
        layer_set if layer_set is not None else default_layer_set(len(net.layers)),
        len(net.layers),
    )
    raw_feats = extract_features(net, flat, layer_ids, label_mode, num_labels=nl, normalize=False)
    activity = np.einsum("ij,ij->i", raw_feats, raw_feats) / raw_feats.shape[1]
    span = activity.max() - activity.min()
    if span > 0:
        activity = (activity - activity.min()) / span
    else:
        activity = np.zeros_like(activity)
    return features, labels, activity


@dataclass
class EmbeddingJob:
    """Declarative description of one embedding export for the CLI."""

    checkpoint: str
    dataset: str
    split: str = "test"
    cap: int = 1000
    layer_set: list[int] | None = None
    label_mode: str | int | None = "none"
    perplexity: float = 30.0
    iterations: int = 1000
    seed: int = 0
    output: str = "embedding.csv"

    def __post_init__(self):
        if not self.checkpoint:
            raise ConfigValidationError("checkpoint: must be non-empty")
        if not self.dataset:
            raise ConfigValidationError("dataset: must be non-empty")
        if self.split not in ("train", "test"):
            raise ConfigValidationError(f"split: must be train or test, got {self.split!r}")
        if not 1 <= self.cap <= MAX_EMBED_SAMPLES:
            raise ConfigValidationError(f"cap: must be in [1, {MAX_EMBED_SAMPLES}]")
        if not self.perplexity > 0:
            raise ConfigValidationError("perplexity: must be positive")
        if self.iterations < 1:
            raise ConfigValidationError("iterations: must be >= 1")
        if self.seed < 0:
            raise ConfigValidationError("seed: must be non-negative")

    @classmethod
    def load(cls, path: Path | str) -> "EmbeddingJob":
        data = json.loads(Path(path).read_text())
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigValidationError(f"{sorted(unknown)[0]}: unknown field")
        return cls(**data)


def emit_embedding_csv(embedding: Embedding2D, path: Path | str) -> None:
    """CSV with columns x,y,label,activity; 17 significant digits so floats
    survive a round trip bit-exactly. Missing activity leaves the column
    empty."""
    lines = ["x,y,label,activity"]
    for i in range(embedding.coords.shape[0]):
        x, y = embedding.coords[i]
        act = "" if embedding.activity is None else f"{embedding.activity[i]:.17g}"
        lines.append(f"{x:.17g},{y:.17g},{int(embedding.labels[i])},{act}")
    Path(path).write_text("\n".join(lines) + "\n")
