"""Backprop baselines that share the forward-forward network shape.

Three loss variants, one backward pass each:
  cross_entropy   softmax head on the last layer, plain supervised learning
  goodness_last   the layer-local objective applied to the final layer only
  goodness_all    the same objective summed over every layer

The goodness variants consume the exact positive/negative batches the
layer-local trainer sees, so any accuracy difference comes from gradient
routing, not data.
"""

import numpy as np
from _synth import make_corner_dataset

from ffbench.bp import BPNetwork, train_bp
from ffbench.core import Rng
from ffbench.evaluation import accuracy, extract_features, predict_head, train_linear_probe
from ffbench.ff import FFTrainConfig
from ffbench.tasks import task_spec

train = make_corner_dataset(512, seed=5)
test = make_corner_dataset(256, seed=6, split="test")
task = task_spec("classify", train.num_classes)
cfg = FFTrainConfig(epochs=12, batch_size=64, learning_rate=0.003, seed=0)

for variant in ("cross_entropy", "goodness_last", "goodness_all"):
    num_labels = task.num_labels if variant == "cross_entropy" else None
    net = BPNetwork.build(train.flat_dim, [64, 64], Rng(0).child("init"), variant, num_labels)
    _, log = train_bp(net, train, task, cfg)

    if variant == "cross_entropy":
        score = accuracy(predict_head(net, test.flat()), test.labels)
        kind = "head accuracy"
    else:
        feats_train = extract_features(net, train.flat(), layer_set=[0, 1])
        feats_test = extract_features(net, test.flat(), layer_set=[0, 1])
        probe, _ = train_linear_probe(
            feats_train, train.labels, epochs=10, learning_rate=0.01,
            rng=Rng(0).child("probe"), num_classes=train.num_classes,
        )
        score = accuracy(probe.predict(feats_test), test.labels)
        kind = "probe accuracy"
    print(f"{variant:>14}: loss {log[0]['loss']:.4f} -> {log[-1]['loss']:.4f}, {kind} {score:.4f}")
