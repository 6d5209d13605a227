"""Exact sampling of an index J with P(J = j) proportional to j**alpha.

The table keeps the prefix sums s_j = 1**alpha + ... + j**alpha in an
append-only float64 buffer.  A draw is an inverse-CDF lookup: the smallest
j with s_j >= u * s_k, found by binary search.
"""

from __future__ import annotations

import numpy as np


class PowerWeightTable:
    """Growable prefix sums of i**alpha, i = 1..capacity.

    Indices in the public API are 1-based, as in the string model:
    ``table.prefix[j - 1]`` is s_j.
    """

    def __init__(self, alpha: float, capacity: int = 1):
        if not alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.alpha = float(alpha)
        self._buf = np.empty(max(16, capacity), dtype=np.float64)
        self._buf[0] = 1.0
        self._k = 1
        self.extend_to(capacity)

    @property
    def capacity(self) -> int:
        return self._k

    @property
    def prefix(self) -> np.ndarray:
        """Read-only view of s_1..s_k."""
        view = self._buf[: self._k]
        view.flags.writeable = False
        return view

    @property
    def total(self) -> float:
        return float(self._buf[self._k - 1])

    def weight(self, j):
        return np.float64(j) ** self.alpha

    def extend(self) -> "PowerWeightTable":
        return self.extend_to(self._k + 1)

    def extend_to(self, k: int) -> "PowerWeightTable":
        """Grow the table to capacity ``k`` (no-op if already that large).

        Accumulation is strictly sequential, s_{j} = s_{j-1} + j**alpha, so
        growing one step at a time or in one call gives identical bits.
        """
        if k <= self._k:
            return self
        if k > self._buf.size:
            size = self._buf.size
            while size < k:
                size *= 2
            buf = np.empty(size, dtype=np.float64)
            buf[: self._k] = self._buf[: self._k]
            self._buf = buf
        j = np.arange(self._k + 1, k + 1, dtype=np.float64)
        seq = np.empty(j.size + 1, dtype=np.float64)
        seq[0] = self._buf[self._k - 1]
        np.power(j, self.alpha, out=seq[1:])
        self._buf[self._k : k] = np.cumsum(seq)[1:]
        self._k = k
        return self

    def _check_k(self, k) -> None:
        kmin, kmax = np.min(k), np.max(k)
        if kmin < 1 or kmax > self._k:
            raise IndexError(f"k must lie in 1..{self._k}, got {kmin if kmin < 1 else kmax}")

    def sample_index(self, k, u):
        """Smallest j in 1..k with s_j >= u * s_k.

        ``k`` and ``u`` may be scalars or broadcastable arrays; ``u`` should
        lie in (0, 1).  The result is a deterministic function of (k, u).
        """
        self._check_k(k)
        s = self._buf[: self._k]
        k_arr = np.asarray(k)
        target = np.asarray(u, dtype=np.float64) * s[k_arr - 1]
        j = np.searchsorted(s, target, side="left") + 1
        j = np.minimum(j, k_arr)
        if np.ndim(j) == 0:
            return int(j)
        return j

    def cdf(self, k: int) -> np.ndarray:
        self._check_k(k)
        return self._buf[:k] / self._buf[k - 1]

    def pmf(self, k: int) -> np.ndarray:
        """Vector of j**alpha / s_k for j = 1..k."""
        self._check_k(k)
        return np.arange(1, k + 1, dtype=np.float64) ** self.alpha / self._buf[k - 1]
