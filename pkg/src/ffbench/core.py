"""Shared numeric kernels: deterministic RNG, Adam updates, matmul, row normalization.

Every tensor in this package is a numpy float64 array in C (row-major) order;
batches are matrices with one sample per row.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-8


class ShapeError(ValueError):
    """Operand shapes do not line up."""


def as_tensor(a) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(a, dtype=np.float64)


class Rng:
    """Deterministic counter-based random stream (Philox 4x64).

    Identical seeds produce identical streams on every platform. Named child
    streams are derived from the master seed plus a hash of the stream name,
    so the draws of one phase (weight init, shuffling, negative sampling, ...)
    never shift when another phase is added, removed, or reordered.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(entropy=[self.seed, *self._path])
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, name: str) -> "Rng":
        """Independent stream keyed by (this stream's path, sha256(name))."""
        digest = hashlib.sha256(name.encode("utf-8")).digest()
        key = int.from_bytes(digest[:8], "little")
        return Rng(self.seed, self._path + (key,))

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


@dataclass
class AdamState:
    """Per-parameter Adam optimizer state (bias-corrected, fixed step size)."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, learning_rate: float = 0.0001) -> "AdamState":
        return cls(
            first_moment=np.zeros_like(param),
            second_moment=np.zeros_like(param),
            learning_rate=learning_rate,
        )


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update, applied to ``params`` in place.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  t <- t+1
    params -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"adam_step shapes differ: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}"
        )
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grads
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * np.square(grads)
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D arrays; deterministic for a fixed thread count."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def l2_normalize(v: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Scale vector(s) to unit Euclidean length: v / max(||v||, eps).

    1-D input is treated as a single vector, 2-D input row-wise. Vectors with
    norm below ``eps`` (in particular all-zero vectors) are divided by ``eps``,
    which maps exact zero to exact zero.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        return v / max(np.linalg.norm(v), eps)
    if v.ndim == 2:
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        return v / np.maximum(norms, eps)
    raise ShapeError(f"l2_normalize expects 1-D or 2-D input, got {v.ndim}-D")


def sigmoid(x):
    """Logistic function, overflow-safe on both tails."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softplus(x):
    """log(1 + exp(x)), computed as x for x > 30 to avoid overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    if out.ndim == 0:
        return float(out)
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Rowwise log-softmax, shift-stabilized."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"expected [batch, classes] logits, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
