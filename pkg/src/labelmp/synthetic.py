"""Synthetic multi-label tasks for tests, demos, and sanity experiments."""

from __future__ import annotations

import numpy as np

from .data import Dataset, Sample, Schema


def memorization_dataset(n_samples: int = 64, n_labels: int = 10,
                         n_noise_features: int = 5, seed: int = 0) -> Dataset:
    """Each sample carries a unique identifying feature plus shared noise
    features; label sets are random. Learnable only by memorization."""
    rng = np.random.Generator(np.random.Philox(seed))
    schema = Schema(labels=n_labels, features=n_samples + n_noise_features,
                    input_kind="tabular")
    samples = []
    for i in range(n_samples):
        ids = [i,
               n_samples + int(rng.integers(n_noise_features)),
               n_samples + int(rng.integers(n_noise_features))]
        ids = sorted(set(ids))
        k = int(rng.integers(1, 4))
        labels = frozenset(rng.choice(n_labels, size=k, replace=False).tolist())
        samples.append(Sample(labels, ids=np.asarray(ids, dtype=np.int64),
                              values=np.ones(len(ids), dtype=np.float64)))
    return Dataset(samples, schema)


def block_dataset(n_train: int = 400, n_val: int = 100, n_test: int = 200,
                  n_blocks: int = 4, block_size: int = 4, n_active: int = 2,
                  miss_rate: float = 0.45, false_rate: float = 0.05,
                  distractor_range: tuple = (5, 25), distractor_pool: int = 300,
                  seed: int = 0):
    """Task with block-correlated labels: the labels of each active latent
    block fire together, but a label's indicator feature is dropped with
    probability miss_rate, spuriously present with probability false_rate,
    and buried among a variable number of distractor features drawn from a
    long-tailed pool (most distractor ids are rare). Recovering a dropped
    label, or rejecting a spurious indicator, requires the co-occurrence
    structure of its block.

    Returns (train, val, test) datasets.
    """
    n_labels = n_blocks * block_size
    schema = Schema(labels=n_labels, features=n_labels + distractor_pool,
                    input_kind="tabular")
    rng = np.random.Generator(np.random.Philox(seed))

    def draw(n):
        samples = []
        for _ in range(n):
            blocks = rng.choice(n_blocks, size=n_active, replace=False)
            members = sorted(int(b) * block_size + k
                             for b in blocks for k in range(block_size))
            active = set(members)
            ids = [lab for lab in range(n_labels)
                   if (rng.random() >= miss_rate if lab in active
                       else rng.random() < false_rate)]
            if not ids:
                ids = [members[int(rng.integers(len(members)))]]
            n_distract = int(rng.integers(distractor_range[0], distractor_range[1] + 1))
            ids += (n_labels + rng.choice(distractor_pool, size=n_distract,
                                          replace=False)).tolist()
            ids = sorted(set(ids))
            samples.append(Sample(frozenset(members),
                                  ids=np.asarray(ids, dtype=np.int64),
                                  values=np.ones(len(ids), dtype=np.float64)))
        return Dataset(samples, schema)

    return draw(n_train), draw(n_val), draw(n_test)
