"""Build an MNIST-format corpus for the desk-scale experiments.

The acceptance experiments need MNIST-shaped data (28x28 grayscale
digits, IDX files, ~10k train examples).  When a directory of real MNIST
files is available it is used directly (set ANDNET_MNIST_DIR).  Otherwise
this module synthesizes a stand-in from scikit-learn's bundled digits:
1797 genuine 8x8 handwritten digit scans, upscaled to 28x28 and
augmented with small deterministic shifts.  Base images are split into
train/test *before* augmentation so no digit leaks across the split.

Everything is deterministic: same call, same bytes.
"""

from __future__ import annotations

import os

import numpy as np

from andnet import dataset

TRAIN_SIZE = 10000
TEST_SIZE = 2000
SIDE = 28

# Cyclic shift schedule (rows, cols); variant v of base image i uses
# SHIFTS[(i + v) % len(SHIFTS)], so neighbours get different jitter.
SHIFTS = [
    (0, 0),
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (2, 1),
    (-2, -1),
    (1, -2),
    (-1, 2),
    (2, -1),
]


def _upscale(img8):
    """8x8 -> 28x28: 3x nearest-neighbour blow-up centered with a 2px border."""
    big = np.kron(img8, np.ones((3, 3)))
    out = np.zeros((SIDE, SIDE))
    out[2:26, 2:26] = big
    return out


def _shift(img, dr, dc):
    """Shift with zero fill (pixels pushed off the edge are lost)."""
    out = np.zeros_like(img)
    src_r = slice(max(0, -dr), SIDE - max(0, dr))
    dst_r = slice(max(0, dr), SIDE - max(0, -dr))
    src_c = slice(max(0, -dc), SIDE - max(0, dc))
    dst_c = slice(max(0, dc), SIDE - max(0, -dc))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def _augment(bases, labels, target):
    """Cycle shift variants over the base images until target is reached."""
    images = np.empty((target, SIDE * SIDE))
    out_labels = np.empty(target, dtype=np.int64)
    n = len(bases)
    k = 0
    variant = 0
    while k < target:
        for i in range(n):
            if k == target:
                break
            dr, dc = SHIFTS[(i + variant) % len(SHIFTS)]
            img = bases[i] if (dr, dc) == (0, 0) else _shift(bases[i], dr, dc)
            images[k] = img.reshape(-1)
            out_labels[k] = labels[i]
            k += 1
        variant += 1
    order = np.random.Generator(np.random.PCG64(12345)).permutation(target)
    return images[order], out_labels[order]


def build_corpus(target_dir, train_size=TRAIN_SIZE, test_size=TEST_SIZE):
    """Write train/test IDX files under target_dir; returns target_dir."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    images = raw.images / 16.0  # 0..16 integer levels -> [0, 1]
    labels = raw.target.astype(np.int64)

    # Deterministic split: every 6th example (per original ordering) is
    # held out, giving ~300 test bases against ~1500 train bases.
    idx = np.arange(len(labels))
    test_mask = idx % 6 == 0
    train_bases = [_upscale(im) for im in images[~test_mask]]
    test_bases = [_upscale(im) for im in images[test_mask]]

    train_x, train_y = _augment(train_bases, labels[~test_mask], train_size)
    test_x, test_y = _augment(test_bases, labels[test_mask], test_size)

    # Quantize exactly like the IDX writer will, so load(save(x)) == x.
    os.makedirs(target_dir, exist_ok=True)
    dataset.save_idx_images(os.path.join(target_dir, dataset.TRAIN_IMAGES), train_x)
    dataset.save_idx_labels(os.path.join(target_dir, dataset.TRAIN_LABELS), train_y)
    dataset.save_idx_images(os.path.join(target_dir, dataset.TEST_IMAGES), test_x)
    dataset.save_idx_labels(os.path.join(target_dir, dataset.TEST_LABELS), test_y)
    return target_dir


def resolve_data_dir(fallback_dir):
    """Directory of IDX files to experiment on.

    Prefers $ANDNET_MNIST_DIR (real MNIST) when it loads; otherwise
    builds (once) the synthetic corpus under ``fallback_dir``.
    Returns (path, description).
    """
    env_dir = os.environ.get("ANDNET_MNIST_DIR")
    if env_dir:
        try:
            dataset.load_mnist(env_dir, "test")
            return env_dir, f"real MNIST from {env_dir}"
        except (OSError, dataset.IdxFormatError) as exc:
            print(f"ANDNET_MNIST_DIR unusable ({exc}); falling back")
    marker = os.path.join(fallback_dir, dataset.TEST_LABELS)
    if not os.path.exists(marker):
        build_corpus(fallback_dir)
    return fallback_dir, "synthetic 28x28 corpus built from sklearn digits"
