"""Layer-local training walkthrough.

Each layer learns from its own goodness loss: high mean squared activation on
positive samples (correct label embedded in the first pixels), low on
negatives (wrong label embedded). No gradient ever crosses a layer boundary.
This script trains a small stack on a synthetic dataset and reads the result
back with the label-scan ("slow") method.
"""

import numpy as np
from _synth import make_corner_dataset

from ffbench.core import Rng
from ffbench.evaluation import accuracy, per_layer_accuracy, predict_slow
from ffbench.ff import FFNetwork, FFTrainConfig, ff_forward_all, goodness, train_ff
from ffbench.tasks import task_spec

train = make_corner_dataset(512, seed=1)
test = make_corner_dataset(256, seed=2, split="test")
task = task_spec("classify", train.num_classes)

net = FFNetwork.build(train.flat_dim, [64, 64], Rng(0).child("init"))
cfg = FFTrainConfig(epochs=24, batch_size=64, learning_rate=0.003, seed=0)

print("pretraining: per-layer losses (each layer optimizes only itself)")
_, log = train_ff(net, train, task, cfg)
for record in log[::4] + [log[-1]]:
    losses = " ".join(f"{v:.4f}" for v in record["layer_losses"])
    print(f"  epoch {record['epoch']}: {losses}")

# goodness gap: positives should score above theta, negatives below
flat = test.flat()
from ffbench.tasks import embed_label, make_negative_labels

pos = embed_label(flat, test.labels, task.num_labels)
neg = embed_label(flat, make_negative_labels(test.labels, task.num_labels, Rng(3)), task.num_labels)
g_pos = np.mean([goodness(h).mean() for h in ff_forward_all(net, pos)])
g_neg = np.mean([goodness(h).mean() for h in ff_forward_all(net, neg)])
print(f"\nmean goodness: positives {g_pos:.3f} vs negatives {g_neg:.3f} (theta = {net.theta})")

pred = predict_slow(net, flat, task.num_labels, [0, 1])
print(f"slow-method accuracy (scan all labels, pick max goodness): {accuracy(pred, test.labels):.4f}")
layer_table = per_layer_accuracy(net, flat, test.labels, task.num_labels)
for i, acc in enumerate(layer_table):
    print(f"  layer {i} alone: {acc:.4f}")
