import inspect
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from ysm import oracle
from ysm.oracle import borel_pmf, enumerate_exact, geometric_pmf, write_expectation_csv


def brute_force(p: float, alpha: float, n: int) -> dict[int, float]:
    """Sum over every (new | copy j) decision sequence, no state merging."""
    out: dict[int, float] = {}
    choices = [range(k + 1) for k in range(1, n)]  # 0 = new, j >= 1 = copy index j
    for seq in itertools.product(*choices):
        words, prob = [0], 1.0
        for k, c in enumerate(seq, start=1):
            if c == 0:
                prob *= p
                words.append(max(words) + 1)
            else:
                s = sum(i**alpha for i in range(1, k + 1))
                prob *= (1 - p) * c**alpha / s
                words.append(words[c - 1])
        for ell in np.bincount(words):
            out[int(ell)] = out.get(int(ell), 0.0) + prob
    return out


@pytest.mark.parametrize("p,alpha,n", [(0.3, 0.5, 5), (0.5, 1.0, 6), (0.75, 2.0, 5), (0.2, 0.0, 6)])
def test_merged_enumeration_matches_brute_force(p, alpha, n):
    exact = enumerate_exact(p, alpha, n).as_floats()
    brute = brute_force(p, alpha, n)
    for ell in range(1, n + 1):
        assert exact.get(ell, 0.0) == pytest.approx(brute.get(ell, 0.0), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("p", [0.25, 0.5, 0.75])
def test_two_words(p):
    ex = enumerate_exact(p, 1.0, 2).expected_nu
    assert ex[1] == 2 * Fraction(p) and ex[2] == 1 - Fraction(p)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
def test_three_words_free_of_alpha(alpha):
    ex = enumerate_exact(0.5, alpha, 3).as_floats()
    assert [ex[1], ex[2], ex[3]] == pytest.approx([1.25, 0.5, 0.25], abs=1e-15)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0])
def test_exact_mass_balance_and_probability(alpha):
    ex = enumerate_exact(0.3, alpha, 8)
    assert ex.mass_balance() == 8
    assert ex.total_probability == 1
    assert ex.path_count == math.factorial(8)


def test_long_double_path_for_fractional_alpha():
    ex = enumerate_exact(0.3, 0.5, 8)
    assert abs(float(ex.total_probability) - 1) < 1e-12
    assert abs(float(ex.mass_balance()) - 8) < 1e-12


def test_all_new_limit():
    ex = enumerate_exact(1 - 1e-9, 1.0, 6).as_floats()
    assert ex[1] == pytest.approx(6, rel=1e-7)


@pytest.mark.parametrize("n", [1, oracle.MAX_ENUMERATION_N + 1])
def test_size_limits(n):
    with pytest.raises(ValueError):
        enumerate_exact(0.5, 1.0, n)


def test_does_not_use_the_sampler():
    assert "weighted_sampler" not in inspect.getsource(oracle)


def test_geometric_pmf():
    assert geometric_pmf(math.log(2), 2) == pytest.approx(0.25)
    assert geometric_pmf(1e-12, 1) == pytest.approx(1.0)
    assert geometric_pmf(50.0, 1) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        geometric_pmf(0.0, 1)


def test_borel_pmf_normalized():
    k = np.arange(1, 200_000)
    assert borel_pmf(0.5, k).sum() == pytest.approx(1.0, abs=1e-12)
    assert borel_pmf(0.5, 1) == pytest.approx(math.exp(-0.5))


def test_csv(tmp_path):
    ex = enumerate_exact(0.5, 1.0, 3)
    write_expectation_csv(ex, tmp_path / "e.csv", "# {}")
    assert (tmp_path / "e.csv").read_text().splitlines() == ["# {}", "ell,expected_nu", "1,1.25", "2,0.5", "3,0.25"]
