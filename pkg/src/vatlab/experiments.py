"""Benchmark constructors shared by the example scripts and the acceptance
suite, so both observe exactly the same tasks.

The moons task fixes a tiny labeled set by anchoring three points per class
near the ends and middle of each arc; with so few labels the supervised
boundary is underdetermined and the value of the unlabeled set is visible.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, SyntheticSpec, gen_blob_images, gen_moons
from .train import SplitSpec

MOONS_ANCHOR_TS = (0.2, np.pi / 2, np.pi - 0.2)


def moons_benchmark(pool_per_class: int = 503, test_per_class: int = 250,
                    noise: float = 0.1, seed: int = 500) -> tuple[Dataset, SplitSpec]:
    """Two-moons with 3 labeled + 500 unlabeled points per class.

    Training pool and test set are separate draws of the same distribution.
    The labeled points are the pool samples nearest the per-class anchors, so
    the labeled set is a pure function of the seed and identical for every
    training arm compared on it.
    """
    pool = gen_moons(SyntheticSpec("moons", pool_per_class, noise, seed=seed))
    test = gen_moons(SyntheticSpec("moons", test_per_class, noise, seed=seed + 100))
    x = np.concatenate([pool.x, test.x])
    y = np.concatenate([pool.y, test.y])

    arcs = {
        0: np.array([[np.cos(t), np.sin(t)] for t in MOONS_ANCHOR_TS]),
        1: np.array([[1 - np.cos(t), 0.5 - np.sin(t)] for t in MOONS_ANCHOR_TS]),
    }
    labeled: list[int] = []
    for cls in (0, 1):
        idx = np.flatnonzero(pool.y == cls)
        for anchor in arcs[cls]:
            order = idx[np.argsort(np.linalg.norm(pool.x[idx] - anchor, axis=1))]
            labeled.append(int(next(i for i in order if i not in labeled)))
    labeled_idx = np.sort(np.asarray(labeled))

    train_idx = np.arange(len(pool.y))
    split = SplitSpec(
        train_indices=train_idx,
        test_indices=np.arange(len(pool.y), len(y)),
        labeled_indices=labeled_idx,
        unlabeled_indices=np.setdiff1d(train_idx, labeled_idx),
    )
    return Dataset(x, y), split


def blob_benchmark(per_class: int = 256, side: int = 32, noise: float = 0.1,
                   seed: int = 0) -> Dataset:
    """The disk-versus-spiked-disk image task at its benchmark size."""
    return gen_blob_images(SyntheticSpec("blob_images", per_class, noise,
                                         side=side, seed=seed))
