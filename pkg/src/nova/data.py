"""Batch iteration over a manifest: cached image loading and seeded,
stateless per-epoch shuffling (resume-safe: the order for epoch e depends
only on (seed, e), never on consumed RNG state)."""

from __future__ import annotations

import numpy as np

from .synthdata import Manifest

_SEED_MASK = (1 << 64) - 1


class ImageStore:
    """Lazy uint8 image cache keyed by record index."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.manifest)

    def image(self, index: int) -> np.ndarray:
        img = self._cache.get(index)
        if img is None:
            img = self.manifest.load_image(self.manifest.records[index])
            self._cache[index] = img
        return img

    def text(self, index: int) -> str:
        return self.manifest.records[index].text


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed) & _SEED_MASK, 0xE60C, int(epoch)])
    )
    return rng.permutation(n)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list:
    """Consecutive index batches of the epoch permutation, dropping the
    trailing partial batch (batch statistics need stable sizes)."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    order = epoch_permutation(n, seed, epoch)
    n_full = n // batch_size
    return [order[i * batch_size : (i + 1) * batch_size] for i in range(n_full)]


def sample_seed(epoch: int, index: int) -> int:
    """Per-(epoch, sample) augmentation seed, unique and stateless; the
    base training seed enters through AugmentConfig.seed."""
    return (int(epoch) * 1_000_003 + int(index)) & _SEED_MASK
