"""Tiny synthetic image dataset shared by the demo scripts.

Class k lights up one corner quadrant over faint noise, so networks and
probes have unambiguous signal without downloading anything.
"""

import numpy as np

from ffbench.core import Rng
from ffbench.datasets import ImageDataset


def make_corner_dataset(n, seed, n_classes=4, side=8, split="train"):
    r = Rng(seed)
    labels = r.integers(0, n_classes, size=n).astype(np.int64)
    images = 0.05 * r.uniform(0.0, 1.0, size=(n, 1, side, side))
    half = side // 2
    for i, k in enumerate(labels):
        y, x = divmod(int(k) % 4, 2)
        images[i, :, y * half : (y + 1) * half, x * half : (x + 1) * half] += 0.9
    return ImageDataset(np.clip(images, 0.0, 1.0), labels, n_classes, "synth", split)
