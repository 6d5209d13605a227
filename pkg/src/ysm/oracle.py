"""Exact small-instance ground truth, coded independently of the simulators.

``enumerate_exact`` walks every string of length n layer by layer.  Word
labels carry no information, so a string is reduced to the multiset of its
words, each word described by (occurrences, copy weight); strings with the
same multiset have the same future and are merged.  For integer alpha the
copy weight sum_{j in word} j**alpha is an integer and all probabilities are
exact fractions; otherwise weights are kept as index tuples and
probabilities accumulate in long double.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

MAX_ENUMERATION_N = 12


@dataclass
class ExactExpectation:
    n: int
    p: float
    alpha: float
    expected_nu: dict
    path_count: int
    total_probability: object
    n_states: int

    def as_floats(self) -> dict[int, float]:
        return {ell: float(v) for ell, v in sorted(self.expected_nu.items())}

    def mass_balance(self):
        """sum_ell ell * E[nu_n(ell)], which must equal n."""
        return sum(ell * v for ell, v in self.expected_nu.items())


def enumerate_exact(p: float, alpha: float, n: int) -> ExactExpectation:
    if not 2 <= n <= MAX_ENUMERATION_N:
        raise ValueError(f"n must lie in 2..{MAX_ENUMERATION_N}, got {n}")
    if not 0.0 < p < 1.0 or alpha < 0:
        raise ValueError("need 0 < p < 1 and alpha >= 0")
    exact = float(alpha).is_integer()
    if exact:
        a = int(alpha)
        one = Fraction(1)
        p_new = Fraction(p)

        def weight(j):
            return j**a

        def start_key(j):
            return weight(j)

        def grow_key(key, j):
            return key + weight(j)

        def key_weight(key):
            return key
    else:
        one = np.longdouble(1)
        p_new = np.longdouble(p)
        la = np.longdouble(alpha)

        def weight(j):
            return np.longdouble(j) ** la

        def start_key(j):
            return (j,)

        def grow_key(key, j):
            return key + (j,)

        def key_weight(key):
            total = np.longdouble(0)
            for j in key:
                total += weight(j)
            return total

    p_copy = one - p_new
    # state -> [probability, number of (new | copy index j) decision paths]
    states: dict[tuple, list] = {((1, start_key(1)),): [one, 1]}
    s_k = weight(1)
    for k in range(1, n):
        nxt: dict[tuple, list] = defaultdict(lambda: [0 * one, 0])
        for blocks, (prob, paths) in states.items():
            key = tuple(sorted(blocks + ((1, start_key(k + 1)),)))
            slot = nxt[key]
            slot[0] += prob * p_new
            slot[1] += paths
            for i, (count, wkey) in enumerate(blocks):
                grown = (count + 1, grow_key(wkey, k + 1))
                key = tuple(sorted(blocks[:i] + (grown,) + blocks[i + 1:]))
                slot = nxt[key]
                slot[0] += prob * p_copy * key_weight(wkey) / s_k
                slot[1] += paths * count
        states = dict(nxt)
        s_k = s_k + weight(k + 1)

    expected: dict[int, object] = defaultdict(lambda: 0 * one)
    total = 0 * one
    path_count = 0
    for blocks, (prob, paths) in states.items():
        total += prob
        path_count += paths
        for count, _ in blocks:
            expected[count] += prob
    return ExactExpectation(n, p, alpha, dict(sorted(expected.items())), path_count, total, len(states))


def geometric_pmf(t: float, k: int) -> float:
    """P(Z(t) = k) for the Yule process: e^{-t} (1 - e^{-t})^{k-1}."""
    if not t > 0 or k < 1:
        raise ValueError("need t > 0 and k >= 1")
    q = math.exp(-t)
    return q * (-math.expm1(-t)) ** (k - 1)


def borel_pmf(mu: float, k):
    """Total progeny law of a Galton-Watson tree with Poisson(mu) offspring.

    For b > 1 every individual of the CMJ population has Poisson(1/b)
    children in total, so B(inf) follows this law with mu = 1/b.
    """
    k = np.asarray(k, dtype=float)
    out = np.exp(-mu * k + (k - 1) * np.log(mu * k) - gammaln(k + 1))
    return float(out) if out.ndim == 0 else out


def write_expectation_csv(ex: ExactExpectation, path, meta_line: str) -> None:
    with open(path, "w") as f:
        f.write(meta_line + "\n")
        f.write("ell,expected_nu\n")
        for ell, v in ex.as_floats().items():
            f.write(f"{ell},{v!r}\n")
