"""Exact t-SNE on network features, with the diagnostics that matter.

Runs the full pipeline: pairwise distances, per-point bandwidth calibration
by bisection, symmetrized joint probabilities, and KL gradient descent with
early exaggeration. The 2-D result is checked by nearest-centroid purity and
written to CSV in the same format the command line tool emits.
"""

import tempfile
from pathlib import Path

import numpy as np
from _synth import make_corner_dataset

from ffbench.analysis import Embedding2D, bandwidths, emit_embedding_csv, joint_probabilities, pairwise_sq_dists, tsne
from ffbench.core import Rng
from ffbench.evaluation import extract_features
from ffbench.ff import FFNetwork, FFTrainConfig, train_ff
from ffbench.tasks import task_spec

ds = make_corner_dataset(120, seed=33)
net = FFNetwork.build(ds.flat_dim, [32, 32], Rng(1).child("init"))
train_ff(net, ds, task_spec("classify", 4), FFTrainConfig(epochs=10, batch_size=64, learning_rate=0.003, seed=1))
feats = extract_features(net, ds.flat(), layer_set=[1])
print(f"features: {feats.shape[0]} points, {feats.shape[1]} dims")

perplexity = 12.0
dists = pairwise_sq_dists(feats)
betas, cond = bandwidths(dists, perplexity)
entropy = -np.sum(cond * np.log(np.where(cond > 0, cond, 1.0)), axis=1)
print(f"bandwidth calibration: worst |perplexity error| = "
      f"{np.max(np.abs(np.exp(entropy) - perplexity)):.2e}")
p = joint_probabilities(feats, perplexity)
print(f"P matrix: symmetric={np.array_equal(p, p.T)}, sum={p.sum():.12f}")

coords, kl = tsne(feats, perplexity=perplexity, iterations=500, rng=Rng(2))
print(f"KL divergence: {kl[0]:.4f} (start) -> {kl[-1]:.4f} (final)")

cents = np.stack([coords[ds.labels == c].mean(axis=0) for c in range(4)])
assign = np.argmin(((coords[:, None, :] - cents[None]) ** 2).sum(-1), axis=1)
print(f"nearest-centroid purity of the 2-D map: {np.mean(assign == ds.labels):.3f}")

out = Path(tempfile.mkdtemp()) / "embedding.csv"
emit_embedding_csv(Embedding2D(coords, ds.labels), out)
print(f"wrote {out} ({len(out.read_text().splitlines())} lines, header + one row per point)")
