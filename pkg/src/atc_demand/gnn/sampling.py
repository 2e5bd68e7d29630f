"""Bucket-balanced sampling over the graph-level target distribution."""

from __future__ import annotations

import logging
from typing import Iterator, Sequence

import numpy as np

from ..errors import DataError

log = logging.getLogger(__name__)


def bucket_edges(targets: Sequence[float], percentiles=(10, 50, 90)) -> np.ndarray:
    return np.percentile(np.asarray(targets, dtype=float), percentiles)


def assign_buckets(targets: Sequence[float], edges: Sequence[float]) -> np.ndarray:
    """Bucket index per target: 0 for t <= e0, k for e(k-1) < t <= e(k), len(edges) above."""
    return np.searchsorted(np.asarray(edges, dtype=float), np.asarray(targets, dtype=float), side="left")


def weighted_sampler(graph_targets: Sequence[float], percentiles=(10, 50, 90), seed=0) -> Iterator[int]:
    """Infinite index stream: a non-empty bucket uniformly, then a member uniformly, with replacement."""
    targets = np.asarray(graph_targets, dtype=float)
    if targets.size == 0:
        raise DataError("weighted sampler needs at least one target")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if np.all(targets == targets[0]):
        log.warning("all %d targets are identical; falling back to uniform sampling", targets.size)
        members = [np.arange(targets.size)]
    else:
        buckets = assign_buckets(targets, bucket_edges(targets, percentiles))
        members = [np.flatnonzero(buckets == b) for b in range(len(percentiles) + 1)]
        members = [m for m in members if m.size]
    while True:
        group = members[rng.integers(len(members))]
        yield int(group[rng.integers(group.size)])


def draw(sampler: Iterator[int], k: int) -> np.ndarray:
    return np.fromiter((next(sampler) for _ in range(k)), dtype=np.int64, count=k)
