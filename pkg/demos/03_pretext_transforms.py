"""Pretext transforms and negative-sample construction, rendered as ASCII.

Every pretext task is a deterministic image transform indexed by a small
label the network must predict: 4 rotations, flips, or 24 quadrant
permutations. Unsupervised negatives instead blend two images through a
blurred binary mask.
"""

import numpy as np

from ffbench.core import Rng
from ffbench.tasks import (
    JIGSAW_PERMS,
    apply_task,
    generate_blur_mask,
    make_hybrid,
    make_negative_labels,
    task_spec,
)

SHADES = " .:-=+*#%@"


def show(title, img):
    print(title)
    for row in img[0, 0]:
        print("   " + "".join(SHADES[int(v * (len(SHADES) - 1))] for v in row))


rng = Rng(7)
img = np.zeros((1, 1, 8, 8))
img[0, 0, 1:7, 2] = 0.9  # a vertical stroke with a foot, so orientation is visible
img[0, 0, 6, 2:6] = 0.9

show("original", img)
rot = task_spec("rotation", 4)
for k in (1, 2):
    show(f"rotation label {k} ({90 * k} degrees)", apply_task(img, np.array([k]), rot))

jig = task_spec("jigsaw2x2", 4)
label = JIGSAW_PERMS.index((1, 0, 3, 2))
show(f"jigsaw label {label}, quadrant order {JIGSAW_PERMS[label]}", apply_task(img, np.array([label]), jig))

# the transform family is a group action: label 0 is always the identity
assert np.array_equal(apply_task(img, np.array([0]), rot), img)
assert np.array_equal(apply_task(img, np.array([0]), jig), img)
print("label 0 is the identity for every task")

# negatives for supervised training: any label except the true one
true = np.array([0, 1, 2, 3, 0, 1])
wrong = make_negative_labels(true, 4, rng)
print(f"\ntrue labels     {true}")
print(f"negative labels {wrong} (never equal to the true label)")

# unsupervised negatives: two images blended through a blurred mask
mask = generate_blur_mask(1, 8, 8, Rng(9))
other = np.zeros_like(img)
other[0, 0, :, 5:] = 0.7
hybrid = make_hybrid(img, other, mask)
show("\nblur mask (1 = keep first image)", mask[:, None, :, :].astype(float))
show("hybrid negative (stroke where the mask is on, right bar where it is off)", hybrid)
print(f"mask fill fraction: {mask.mean():.2f} (single draws vary; repeated blurring "
      "just keeps regions contiguous)")
