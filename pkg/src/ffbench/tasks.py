"""Pretext tasks and positive/negative batch construction.

A task turns an image into (transformed image, task label). The supervised
"classify" task is the degenerate case: identity transform, label = class.
Pretext tasks are label-free image transformations:

  rotation   4 labels, label k rotates counterclockwise by k*90 degrees
  flip_h     2 labels, label 1 mirrors horizontally
  flip_hv    4 labels, horizontal and/or vertical mirror
  jigsaw2x2  24 labels, one per permutation of the four image quadrants

Labels ride inside the image: the first num_labels entries of the flattened
(channel-major) image are overwritten with a one-hot code. A positive pair is
(transformed image, true label); the matching negative embeds a wrong label
into the same transformed image, so only the label pixels differ.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import Rng, ShapeError, as_tensor

# All 24 orderings of the four quadrants, lexicographic, so label 0 is the
# identity. Output slot j receives input patch perm[j]; patches are numbered
# row-major: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
JIGSAW_PERMS: tuple[tuple[int, ...], ...] = tuple(itertools.permutations(range(4)))

TASK_NUM_LABELS = {
    "rotation": 4,
    "flip_h": 2,
    "flip_hv": 4,
    "jigsaw2x2": len(JIGSAW_PERMS),
}

TASK_NAMES = ("classify",) + tuple(TASK_NUM_LABELS)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    num_labels: int


def task_spec(name: str, num_classes: int | None = None) -> TaskSpec:
    """Build the TaskSpec for a task name.

    "classify" needs the dataset's class count; pretext tasks have a fixed
    label count of their own.
    """
    if name == "classify":
        if num_classes is None:
            raise ValueError("classify task needs num_classes")
        return TaskSpec("classify", num_classes)
    if name not in TASK_NUM_LABELS:
        raise ValueError(f"unknown task {name!r}; known: {', '.join(TASK_NAMES)}")
    return TaskSpec(name, TASK_NUM_LABELS[name])


def _rotate(images: np.ndarray, quarter_turns: int) -> np.ndarray:
    return np.rot90(images, quarter_turns, axes=(2, 3))


def _jigsaw(images: np.ndarray, perm: tuple[int, ...]) -> np.ndarray:
    h, w = images.shape[2], images.shape[3]
    if h % 2 or w % 2:
        raise ShapeError(f"jigsaw2x2 needs even image sides, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    slots = (
        (slice(None, h2), slice(None, w2)),
        (slice(None, h2), slice(w2, None)),
        (slice(h2, None), slice(None, w2)),
        (slice(h2, None), slice(w2, None)),
    )
    out = np.empty_like(images)
    for j, src in enumerate(perm):
        sy, sx = slots[src]
        dy, dx = slots[j]
        out[:, :, dy, dx] = images[:, :, sy, sx]
    return out


def apply_task(images: np.ndarray, task_labels: np.ndarray, task: TaskSpec) -> np.ndarray:
    """Transform a [count, channels, height, width] batch per its task labels.

    Always returns a fresh array; the input is never written to.
    """
    images = as_tensor(images)
    if images.ndim != 4:
        raise ShapeError(f"expected 4-D image batch, got {images.shape}")
    task_labels = np.asarray(task_labels, dtype=np.int64)
    if task_labels.shape != (images.shape[0],):
        raise ShapeError(
            f"task labels shape {task_labels.shape} does not match batch {images.shape[0]}"
        )
    if task_labels.size and (task_labels.min() < 0 or task_labels.max() >= task.num_labels):
        raise ValueError(f"task labels outside [0, {task.num_labels})")

    if task.name == "classify":
        return images.copy()
    out = np.empty_like(images)
    for k in np.unique(task_labels):
        sel = task_labels == k
        if task.name == "rotation":
            out[sel] = _rotate(images[sel], int(k))
        elif task.name == "flip_h":
            out[sel] = images[sel, :, :, ::-1] if k else images[sel]
        elif task.name == "flip_hv":
            block = images[sel]
            if k & 1:
                block = block[:, :, :, ::-1]
            if k & 2:
                block = block[:, :, ::-1, :]
            out[sel] = block
        elif task.name == "jigsaw2x2":
            out[sel] = _jigsaw(images[sel], JIGSAW_PERMS[int(k)])
        else:
            raise ValueError(f"unknown task {task.name!r}")
    return out


def embed_label(flat: np.ndarray, labels: np.ndarray, num_labels: int) -> np.ndarray:
    """Overwrite the first num_labels entries of each row with a one-hot code."""
    flat = as_tensor(flat)
    if flat.ndim != 2:
        raise ShapeError(f"expected [count, dim] batch, got {flat.shape}")
    if flat.shape[1] < num_labels:
        raise ShapeError(f"flat dim {flat.shape[1]} is smaller than {num_labels} label slots")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (flat.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {flat.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_labels):
        raise ValueError(f"labels outside [0, {num_labels})")
    out = flat.copy()
    out[:, :num_labels] = np.eye(num_labels)[labels]
    return out


def embed_neutral(flat: np.ndarray, num_labels: int) -> np.ndarray:
    """Overwrite the label slots with a uniform 1/num_labels in every slot."""
    flat = as_tensor(flat)
    if flat.ndim != 2:
        raise ShapeError(f"expected [count, dim] batch, got {flat.shape}")
    if flat.shape[1] < num_labels:
        raise ShapeError(f"flat dim {flat.shape[1]} is smaller than {num_labels} label slots")
    out = flat.copy()
    out[:, :num_labels] = 1.0 / num_labels
    return out


def sample_task_labels(count: int, task: TaskSpec, rng: Rng) -> np.ndarray:
    """Draw one uniform task label per sample."""
    return rng.integers(0, task.num_labels, size=count).astype(np.int64)


def make_negative_labels(labels: np.ndarray, num_labels: int, rng: Rng) -> np.ndarray:
    """Pick a wrong label uniformly for each sample (never equal to the truth)."""
    labels = np.asarray(labels, dtype=np.int64)
    if num_labels < 2:
        raise ValueError("need at least 2 labels to pick a wrong one")
    offsets = rng.integers(1, num_labels, size=labels.shape[0])
    return (labels + offsets) % num_labels


def make_task_batch(
    images: np.ndarray,
    task: TaskSpec,
    rng: Rng,
    labels: np.ndarray | None = None,
    negative_rng: Rng | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build (positive, negative, task_labels) flat batches for one task.

    For "classify" the task labels are the provided class labels; for pretext
    tasks they are sampled uniformly and the images transformed accordingly.
    The negative for each sample is the *same* transformed image with a wrong
    label embedded, so the net can only separate the pair via the label slots.
    Wrong labels come from negative_rng when given, so negative sampling can
    live on its own seed substream.
    """
    if task.name == "classify":
        if labels is None:
            raise ValueError("classify task needs class labels")
        task_labels = np.asarray(labels, dtype=np.int64)
        if task_labels.shape != (images.shape[0],):
            raise ShapeError(
                f"labels shape {task_labels.shape} does not match batch {images.shape[0]}"
            )
    else:
        task_labels = sample_task_labels(images.shape[0], task, rng)
    transformed = apply_task(images, task_labels, task)
    flat = transformed.reshape(transformed.shape[0], -1)
    wrong = make_negative_labels(task_labels, task.num_labels, negative_rng or rng)
    pos = embed_label(flat, task_labels, task.num_labels)
    neg = embed_label(flat, wrong, task.num_labels)
    return pos, neg, task_labels


# ---------------------------------------------------------------------------
# Label-free negatives: hybrids of two images under a smooth random mask.
# ---------------------------------------------------------------------------

BLUR_PASSES = 8
MASK_THRESHOLD = 0.5


def _blur_pass(field: np.ndarray) -> np.ndarray:
    """One separable [1/4, 1/2, 1/4] smoothing pass with edge replication."""
    p = np.pad(field, ((0, 0), (1, 1), (0, 0)), mode="edge")
    field = 0.25 * p[:, :-2, :] + 0.5 * p[:, 1:-1, :] + 0.25 * p[:, 2:, :]
    p = np.pad(field, ((0, 0), (0, 0), (1, 1)), mode="edge")
    return 0.25 * p[:, :, :-2] + 0.5 * p[:, :, 1:-1] + 0.25 * p[:, :, 2:]


def generate_blur_mask(count: int, height: int, width: int, rng: Rng) -> np.ndarray:
    """Binary [count, height, width] masks with large smooth regions.

    Start from iid coin flips, smooth BLUR_PASSES times, then cut strictly
    above MASK_THRESHOLD. Smoothing kills isolated pixels, so the surviving
    regions are blobs rather than salt-and-pepper noise.
    """
    field = rng.integers(0, 2, size=(count, height, width)).astype(np.float64)
    for _ in range(BLUR_PASSES):
        field = _blur_pass(field)
    return (field > MASK_THRESHOLD).astype(np.float64)


def make_hybrid(images_a: np.ndarray, images_b: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """mask*a + (1-mask)*b, with the mask shared across channels."""
    images_a = as_tensor(images_a)
    images_b = as_tensor(images_b)
    if images_a.shape != images_b.shape:
        raise ShapeError(f"image shapes differ: {images_a.shape} vs {images_b.shape}")
    if masks.shape != (images_a.shape[0],) + images_a.shape[2:]:
        raise ShapeError(
            f"masks shape {masks.shape} does not match images {images_a.shape}"
        )
    m = masks[:, None, :, :]
    return m * images_a + (1.0 - m) * images_b


def make_unsupervised_batch(images: np.ndarray, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Positives are the raw images; negatives are masked two-image hybrids.

    Each sample i is blended with a uniformly chosen partner j != i under a
    fresh blur mask. No labels are embedded in either half.
    """
    images = as_tensor(images)
    if images.ndim != 4:
        raise ShapeError(f"expected 4-D image batch, got {images.shape}")
    n = images.shape[0]
    if n < 2:
        raise ValueError("need at least 2 images to build hybrids")
    partners = (np.arange(n) + 1 + rng.integers(0, n - 1, size=n)) % n
    masks = generate_blur_mask(n, images.shape[2], images.shape[3], rng)
    hybrids = make_hybrid(images, images[partners], masks)
    return images.reshape(n, -1).copy(), hybrids.reshape(n, -1)
