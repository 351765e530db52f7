"""Shared test fixtures: synthetic structured datasets and gradient oracles.

The synthetic dataset gives every class a bright patch in a class-specific
corner over low noise, so probes and slow inference have real signal to find
without any downloaded data. It never substitutes for the real-data criteria;
those skip honestly when the files are absent.
"""

import numpy as np
import pytest

from ffbench.core import Rng
from ffbench.datasets import ImageDataset


def make_synth_dataset(n, seed, n_classes=4, side=8, channels=1, split="train"):
    """Class k lights a distinct corner patch; everything else is faint noise."""
    r = Rng(seed)
    labels = r.integers(0, n_classes, size=n).astype(np.int64)
    images = 0.05 * r.uniform(0.0, 1.0, size=(n, channels, side, side))
    half = side // 2
    for i, k in enumerate(labels):
        y, x = divmod(int(k) % 4, 2)
        images[i, :, y * half : (y + 1) * half, x * half : (x + 1) * half] += 0.9
    return ImageDataset(np.clip(images, 0.0, 1.0), labels, n_classes, "synth", split)


@pytest.fixture
def synth_train():
    return make_synth_dataset(256, seed=11)


@pytest.fixture
def synth_test():
    return make_synth_dataset(128, seed=12, split="test")


def fd_gradient(loss_fn, param, step=1e-6):
    """Central finite differences of loss_fn() w.r.t. each entry of param.

    loss_fn takes no arguments and reads param by reference; param is
    restored exactly after probing.
    """
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = loss_fn()
        flat[i] = keep - step
        down = loss_fn()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def max_rel_err(analytic, numeric, floor=1e-6):
    """Worst-case relative disagreement, floored so near-zero pairs compare
    on an absolute scale."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
