"""Log-space weighted sampling tree.

A complete binary tree over log-weights: each interior node holds the
logsumexp of its two children, so the root is the log-normaliser of the
implied softmax over leaves. Updates and single draws cost O(log n), all
arithmetic stays in log space, and dead leaves (-inf) carry zero mass.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import EmptyDistributionError
from ._backend import BACKEND, kernel

__all__ = ["LogSumExpTree", "BACKEND"]

NEG_INF = -math.inf


class LogSumExpTree:
    """Flat-array complete binary tree of log-weights.

    The requested capacity is padded to the next power of two; the root
    lives at index 1 and leaf ``i`` at index ``leaf_base + i``. Padding
    leaves stay at -inf and are never sampled.

    Single-writer: there is no internal synchronization, so concurrent
    reads during a write are not supported.
    """

    __slots__ = ("capacity", "nodes", "size", "writes", "_leaf_base", "_written")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        leaf_base = 1 << (int(capacity) - 1).bit_length()
        self.capacity = int(capacity)
        self._leaf_base = leaf_base
        self.nodes = np.full(2 * leaf_base, NEG_INF)
        self._written = np.zeros(self.capacity, dtype=bool)
        self.size = 0  # number of distinct leaves ever written
        self.writes = 0  # cumulative node writes, for complexity checks

    @classmethod
    def _empty(cls) -> "LogSumExpTree":
        """Zero-capacity tree produced by from_logits([]); holds no mass."""
        tree = object.__new__(cls)
        tree.capacity = 0
        tree._leaf_base = 1
        tree.nodes = np.full(2, NEG_INF)
        tree._written = np.zeros(0, dtype=bool)
        tree.size = 0
        tree.writes = 0
        return tree

    @classmethod
    def from_logits(cls, logits) -> "LogSumExpTree":
        """Bulk-build a tree holding the given log-weights.

        Produces the same node array as a fresh tree followed by one
        set_logit per entry, in O(n).
        """
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 1:
            raise ValueError("logits must be one-dimensional")
        if logits.size == 0:
            return cls._empty()
        if np.isnan(logits).any() or (logits == np.inf).any():
            raise ValueError("logits must be finite or -inf")
        tree = cls(logits.size)
        base = tree._leaf_base
        tree.nodes[base:base + logits.size] = logits
        kernel.build(tree.nodes, base)
        tree._written[:] = True
        tree.size = logits.size
        return tree

    def __len__(self) -> int:
        return self.capacity

    @property
    def leaves(self) -> np.ndarray:
        """Read-only view of the addressable leaf values."""
        view = self.nodes[self._leaf_base:self._leaf_base + self.capacity]
        view.flags.writeable = False
        return view

    def log_norm(self) -> float:
        """Log of the total weight (the root); -inf for an empty tree."""
        return float(self.nodes[1])

    def set_logit(self, index: int, logit: float) -> None:
        """Replace one leaf's log-weight and rebuild its ancestor path."""
        index = self._check_index(index)
        logit = float(logit)
        if math.isnan(logit) or logit == math.inf:
            raise ValueError(f"logit must be finite or -inf, got {logit}")
        if not self._written[index]:
            self._written[index] = True
            self.size += 1
        self.writes += kernel.update(self.nodes, self._leaf_base, index, logit)

    def set_logits(self, indices, logits) -> None:
        """Bulk version of set_logit for a batch of leaves."""
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        logits = np.ascontiguousarray(logits, dtype=np.float64)
        if indices.shape != logits.shape or indices.ndim != 1:
            raise ValueError("indices and logits must be matching 1-d arrays")
        if indices.size == 0:
            return
        if indices.min() < 0 or indices.max() >= self.capacity:
            raise ValueError("leaf index out of range")
        if np.isnan(logits).any() or (logits == np.inf).any():
            raise ValueError("logits must be finite or -inf")
        fresh = ~self._written[indices]
        if fresh.any():
            self._written[indices[fresh]] = True
            self.size = int(self._written.sum())
        kernel.update_many(self.nodes, self._leaf_base, indices, logits)

    def log_prob(self, index: int) -> float:
        """Log-probability of sampling the leaf; -inf for dead leaves."""
        index = self._check_index(index)
        leaf = self.nodes[self._leaf_base + index]
        if leaf == NEG_INF:
            return NEG_INF
        return float(leaf - self.nodes[1])

    def sample(self, u: float) -> int:
        """Map u in [0, 1) to a leaf index with probability exp(leaf - root).

        The descent compares the running log-residual against left-child
        values, subtracting passed mass in log space on every right turn.
        A dead right subtree forces a left turn, so a live leaf is always
        returned; u = 0 deterministically yields the leftmost live leaf.
        """
        u = float(u)
        self._check_sampleable()
        if not 0.0 <= u < 1.0:
            raise ValueError(f"u must be in [0, 1), got {u}")
        return int(kernel.sample(self.nodes, self._leaf_base, u))

    def sample_many(self, us) -> np.ndarray:
        """Vectorised sample(); one independent draw per entry of us."""
        us = np.ascontiguousarray(us, dtype=np.float64)
        if us.ndim != 1:
            raise ValueError("us must be one-dimensional")
        self._check_sampleable()
        if us.size and (us.min() < 0.0 or us.max() >= 1.0):
            raise ValueError("all u must be in [0, 1)")
        out = np.empty(us.size, dtype=np.int64)
        kernel.sample_many(self.nodes, self._leaf_base, us, out)
        return out

    def _check_index(self, index: int) -> int:
        index = int(index)
        if not 0 <= index < self.capacity:
            raise ValueError(
                f"leaf index {index} out of range for capacity {self.capacity}")
        return index

    def _check_sampleable(self) -> None:
        if self.nodes[1] == NEG_INF:
            raise EmptyDistributionError("tree holds no mass")
