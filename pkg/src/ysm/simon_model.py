"""The power-weighted Simon model of string growth.

Word 1 is always new.  At each step k = 1..n-1 the word w_{k+1} is new with
probability p; otherwise it copies w_J with J drawn from
``PowerWeightTable.sample_index`` over 1..k, i.e. P(J = j) = j**alpha / s_k.

Each step consumes exactly two uniforms from the generator, ``(coin, u)``,
in that order, whether or not the copy branch is taken.  ``run`` draws the
same stream as an ``(n - 1, 2)`` array, so ``run`` and a loop of ``step``
calls on the same seed produce the same string.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .rng import MASK64, make_rng
from .weighted_sampler import PowerWeightTable


@dataclass(frozen=True)
class ModelParams:
    p: float
    alpha: float
    n: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not self.alpha >= 0.0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def p_bar(self) -> float:
        return 1.0 - self.p


class StringState:
    """The string w_1..w_k together with per-word occurrence counts.

    Word ids are 0-based and assigned in order of first appearance.
    """

    def __init__(self):
        self.word_of_index = np.zeros(16, dtype=np.uint32)
        self.count_of_word = np.zeros(16, dtype=np.int64)
        self.length = 1
        self.distinct = 1
        self.count_of_word[0] = 1

    def _grow(self, arr: np.ndarray, needed: int) -> np.ndarray:
        if needed <= arr.size:
            return arr
        out = np.zeros(max(needed, 2 * arr.size), dtype=arr.dtype)
        out[: arr.size] = arr
        return out

    @property
    def words(self) -> np.ndarray:
        return self.word_of_index[: self.length]

    @property
    def counts(self) -> np.ndarray:
        return self.count_of_word[: self.distinct]

    def append_new(self) -> int:
        self.word_of_index = self._grow(self.word_of_index, self.length + 1)
        self.count_of_word = self._grow(self.count_of_word, self.distinct + 1)
        w = self.distinct
        self.word_of_index[self.length] = w
        self.count_of_word[w] = 1
        self.distinct += 1
        self.length += 1
        return w

    def append_copy(self, j: int) -> int:
        """Append a copy of the word at 1-based index ``j``."""
        self.word_of_index = self._grow(self.word_of_index, self.length + 1)
        w = int(self.word_of_index[j - 1])
        self.word_of_index[self.length] = w
        self.count_of_word[w] += 1
        self.length += 1
        return w

    def step(self, table: PowerWeightTable, params: ModelParams, rng: np.random.Generator) -> "StringState":
        coin, u = rng.random(2)
        return self.apply(table, params.p, coin, u)

    def apply(self, table: PowerWeightTable, p: float, coin: float, u: float) -> "StringState":
        """One step driven by explicit uniforms ``coin`` and ``u``."""
        k = self.length
        table.extend_to(k + 1)
        if coin < p:
            self.append_new()
        else:
            self.append_copy(table.sample_index(k, u))
        return self

    def histogram(self) -> "OccurrenceHistogram":
        return OccurrenceHistogram.from_word_counts(self.counts, self.length)


def step(state: StringState, table: PowerWeightTable, params: ModelParams, rng: np.random.Generator) -> StringState:
    return state.step(table, params, rng)


@dataclass
class OccurrenceHistogram:
    """nu_n(ell): number of distinct words occurring exactly ell times."""

    n: int
    counts: dict[int, int]
    distinct: int
    replicates: int = 1

    @classmethod
    def from_word_counts(cls, word_counts: np.ndarray, n: int) -> "OccurrenceHistogram":
        nu = np.bincount(np.asarray(word_counts, dtype=np.int64))
        return cls.from_array(nu, n)

    @classmethod
    def from_array(cls, nu: np.ndarray, n: int, replicates: int = 1) -> "OccurrenceHistogram":
        ells = np.flatnonzero(nu)
        ells = ells[ells > 0]
        counts = {int(ell): int(nu[ell]) for ell in ells}
        return cls(n=n, counts=counts, distinct=sum(counts.values()), replicates=replicates)

    def as_array(self, ell_max: int | None = None) -> np.ndarray:
        top = max(self.counts, default=0) if ell_max is None else ell_max
        nu = np.zeros(top + 1, dtype=np.int64)
        for ell, c in self.counts.items():
            if ell <= top:
                nu[ell] = c
        return nu

    def check(self) -> None:
        """Conservation laws: sum nu = distinct and sum ell * nu = total length."""
        if sum(self.counts.values()) != self.distinct:
            raise AssertionError("sum of nu_n(ell) differs from the number of distinct words")
        if sum(ell * c for ell, c in self.counts.items()) != self.n * self.replicates:
            raise AssertionError("sum of ell * nu_n(ell) differs from the string length")

    def merge(self, other: "OccurrenceHistogram") -> "OccurrenceHistogram":
        """Pool two histograms of strings of equal length."""
        if other.n != self.n:
            raise ValueError("can only merge histograms of equal string length")
        counts = dict(self.counts)
        for ell, c in other.counts.items():
            counts[ell] = counts.get(ell, 0) + c
        return OccurrenceHistogram(self.n, dict(sorted(counts.items())), self.distinct + other.distinct,
                                   self.replicates + other.replicates)


def grow_string(n: int, p: float, alpha: float, rng: np.random.Generator,
                table: PowerWeightTable | None = None) -> np.ndarray:
    """Word id of every index 1..n of one realization (vectorized).

    Copy targets J_k depend only on k and the step's uniform, so they are
    drawn all at once; word identity is then resolved by pointer jumping
    along the copy links, which always point to strictly earlier indices.
    """
    if n == 1:
        return np.zeros(1, dtype=np.uint32)
    draws = rng.random((n - 1, 2))
    if table is None:
        table = PowerWeightTable(alpha, n)
    else:
        table.extend_to(n)
    k = np.arange(1, n)
    is_new = np.empty(n, dtype=bool)
    is_new[0] = True
    is_new[1:] = draws[:, 0] < p
    jumps = table.sample_index(k, draws[:, 1]) - 1
    root = np.arange(n)
    copy = ~is_new[1:]
    root[1:][copy] = jumps[copy]
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    ids = np.cumsum(is_new) - 1
    return ids[root].astype(np.uint32)


def run(params: ModelParams, stream: int = 0) -> OccurrenceHistogram:
    rng = make_rng(params.seed, stream)
    words = grow_string(params.n, params.p, params.alpha, rng)
    return OccurrenceHistogram.from_word_counts(np.bincount(words), params.n)


def run_sequential(params: ModelParams, stream: int = 0) -> StringState:
    """Reference implementation of ``run`` built from ``step``; slow."""
    rng = make_rng(params.seed, stream)
    table = PowerWeightTable(params.alpha)
    state = StringState()
    for _ in range(params.n - 1):
        state.step(table, params, rng)
    return state


def normalized_histogram(h: OccurrenceHistogram, p: float) -> dict[int, float]:
    """nu_n(ell) / (n p) for every ell present (pooled over replicates)."""
    scale = h.n * h.replicates * p
    return {ell: c / scale for ell, c in sorted(h.counts.items())}


def histogram_batch(n: int, p: float, alpha: float, replicates: int,
                    rng: np.random.Generator) -> np.ndarray:
    """nu_n(ell) for many independent short strings at once.

    Returns an integer array of shape (replicates, n + 1) whose column ell
    holds nu_n(ell).  Meant for small n; the random stream is consumed in a
    different order than ``run``.
    """
    if n > 255:
        raise ValueError("histogram_batch is for short strings (n <= 255)")
    table = PowerWeightTable(alpha, n)
    words = np.zeros((replicates, n), dtype=np.uint8)
    next_id = np.ones(replicates, dtype=np.uint8)
    rows = np.arange(replicates)
    for k in range(1, n):
        coin = rng.random(replicates)
        u = rng.random(replicates)
        new = coin < p
        src = table.sample_index(np.full(replicates, k), u) - 1
        words[:, k] = np.where(new, next_id, words[rows, src])
        next_id += new
    flat = words.astype(np.int64) + (rows * n)[:, None]
    occ = np.bincount(flat.ravel(), minlength=replicates * n).reshape(replicates, n)
    flat_nu = occ + (rows * (n + 1))[:, None]
    nu = np.bincount(flat_nu.ravel(), minlength=replicates * (n + 1)).reshape(replicates, n + 1)
    nu[:, 0] = 0
    return nu


@dataclass
class TaggedTrajectory:
    j: int
    u: float
    samples: list[tuple[float, float, int]] = field(default_factory=list)

    def times(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    def attraction(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])

    def occurrences(self) -> np.ndarray:
        return np.array([s[2] for s in self.samples], dtype=np.int64)


def attraction_path(words: np.ndarray, j: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Full-resolution (A_j(m), N_j(m)) for m = 0..n.

    Entries are zero for m < j.  A is updated incrementally,
    A_j(m+1) = (m / (m+1))**alpha * A_j(m) + [w_{m+1} == w_j].  If the j-th
    word is a repetition both arrays are identically zero.
    """
    n = len(words)
    A = np.zeros(n + 1)
    N = np.zeros(n + 1, dtype=np.int64)
    w = words[j - 1]
    if j > 1 and np.any(words[: j - 1] == w):
        return A, N
    a, c = 1.0, 1
    A[j], N[j] = a, c
    hits = (words == w).tolist()
    for m in range(j, n):
        a *= (m / (m + 1)) ** alpha
        if hits[m]:
            a += 1.0
            c += 1
        A[m + 1], N[m + 1] = a, c
    return A, N


def count_strict_increases(A: np.ndarray) -> int:
    """Card{0 <= k <= n-1 : A(k) < A(k+1)}."""
    return int(np.count_nonzero(A[1:] > A[:-1]))


def _tag_indices(n: int, tag_fractions: Sequence[float]) -> list[int]:
    tags = []
    for u in tag_fractions:
        if not 0.0 < u < 1.0:
            raise ValueError(f"tag fractions must lie in (0, 1), got {u}")
        tags.append(max(1, math.ceil(u * n)))
    if len(set(tags)) != len(tags):
        raise ValueError("tag fractions map to the same index")
    return tags


def _trajectory(words: np.ndarray, j: int, alpha: float, grid: Iterable[float]) -> TaggedTrajectory:
    n = len(words)
    w = words[j - 1]
    pos = np.flatnonzero(words == w) + 1
    cumw = np.cumsum(pos.astype(np.float64) ** alpha)
    traj = TaggedTrajectory(j=j, u=j / n)
    for t in grid:
        m = math.floor(t * n)
        if m < j:
            traj.samples.append((t, 0.0, 0))
            continue
        c = int(np.searchsorted(pos, m, side="right"))
        traj.samples.append((t, float(cumw[c - 1] / float(m) ** alpha), c))
    return traj


def run_tagged(params: ModelParams, tag_fractions: Sequence[float], grid: Sequence[float],
               stream: int = 0, max_attempts: int = 10_000) -> tuple[list[TaggedTrajectory], int]:
    """Tagged-word trajectories conditioned on every tagged index being new.

    The tagged indices are j = ceil(u * n).  A realization in which any
    tagged word is a repetition is discarded entirely and a fresh one is
    grown from the same generator; with m tags (none at index 1) the
    acceptance probability is p**m.  Returns the trajectories and the
    number of realizations grown.
    """
    if list(grid) != sorted(grid) or any(not 0.0 < t <= 1.0 for t in grid):
        raise ValueError("grid must be sorted and lie in (0, 1]")
    tags = _tag_indices(params.n, tag_fractions)
    rng = make_rng(params.seed, stream)
    table = PowerWeightTable(params.alpha, params.n)
    for attempt in range(1, max_attempts + 1):
        words = grow_string(params.n, params.p, params.alpha, rng, table)
        _, first_seen = np.unique(words, return_index=True)
        if all(first_seen[words[j - 1]] == j - 1 for j in tags):
            return [_trajectory(words, j, params.alpha, grid) for j in tags], attempt
    raise RuntimeError(f"no realization with all tagged words new after {max_attempts} attempts")


def write_histogram_csv(h: OccurrenceHistogram, path, meta: dict) -> None:
    with open(path, "w", newline="") as f:
        f.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["ell", "count"])
        for ell, c in sorted(h.counts.items()):
            writer.writerow([ell, c])


def histogram_json(h: OccurrenceHistogram, p: float, alpha: float, seed: int) -> dict:
    return {
        "n": h.n,
        "p": p,
        "alpha": alpha,
        "seed": seed,
        "replicates": h.replicates,
        "distinct": h.distinct,
        "counts": {str(ell): c for ell, c in sorted(h.counts.items())},
    }


def write_trajectories_csv(trajs: Sequence[TaggedTrajectory], path, meta: dict) -> None:
    with open(path, "w", newline="") as f:
        f.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["u", "t", "A", "N"])
        for tr in trajs:
            for t, a, c in tr.samples:
                writer.writerow([repr(tr.u), repr(t), repr(a), c])
