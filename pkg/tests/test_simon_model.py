import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ysm.oracle import enumerate_exact
from ysm.rng import make_rng
from ysm.simon_model import (ModelParams, OccurrenceHistogram, StringState, attraction_path,
                             count_strict_increases, grow_string, histogram_batch, histogram_json,
                             normalized_histogram, run, run_sequential, run_tagged,
                             write_histogram_csv, write_trajectories_csv)
from ysm.weighted_sampler import PowerWeightTable


@pytest.mark.parametrize("kwargs", [dict(p=0.0, alpha=0, n=5), dict(p=1.0, alpha=0, n=5),
                                    dict(p=0.5, alpha=-1, n=5), dict(p=0.5, alpha=0, n=0),
                                    dict(p=0.5, alpha=0, n=5, seed=-1)])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_first_repetition_copies_word_one():
    state = StringState()
    table = PowerWeightTable(1.0)
    state.apply(table, 0.5, coin=0.9, u=0.77)
    assert state.words.tolist() == [0, 0]
    assert state.counts.tolist() == [2]


@pytest.mark.parametrize("u,copied", [(0.33, 0), (1 / 3, 0), (0.34, 1), (0.99, 1)])
def test_second_repetition_uses_power_weights(u, copied):
    state = StringState()
    table = PowerWeightTable(1.0)
    state.apply(table, 0.5, coin=0.1, u=0.5)  # w_2 new
    state.apply(table, 0.5, coin=0.9, u=u)
    assert state.words[-1] == copied


def test_near_certain_innovation_gives_all_distinct():
    h = run(ModelParams(1 - 1e-12, 1.0, 5000, seed=3))
    assert h.counts == {1: 5000}


def test_single_word_string():
    assert run(ModelParams(0.5, 0.0, 1)).counts == {1: 1}


def test_two_word_repetition():
    state = StringState()
    state.apply(PowerWeightTable(0.0), 0.5, coin=0.7, u=0.2)
    assert state.histogram().counts == {2: 1}


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.sampled_from([0.0, 0.5, 1.0, 2.0]), st.integers(1, 400),
       st.integers(0, 2**64 - 1))
def test_vectorized_run_equals_step_loop(p, alpha, n, seed):
    params = ModelParams(p, alpha, n, seed)
    state = run_sequential(params)
    assert np.array_equal(grow_string(n, p, alpha, make_rng(seed)), state.words)
    assert run(params) == state.histogram()


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.0, 3.0), st.integers(1, 3000), st.integers(0, 1000))
def test_conservation_laws(p, alpha, n, seed):
    h = run(ModelParams(p, alpha, n, seed))
    h.check()
    assert sum(h.counts.values()) == h.distinct
    assert sum(ell * c for ell, c in h.counts.items()) == n
    words = grow_string(n, p, alpha, make_rng(seed))
    assert words.max() < h.distinct


def test_mean_number_of_distinct_words(rng):
    n, p, reps = 60, 0.3, 10**4
    distinct = histogram_batch(n, p, 1.0, reps, rng).sum(axis=1)
    se = distinct.std(ddof=1) / math.sqrt(reps)
    assert abs(distinct.mean() - (1 + (n - 1) * p)) <= 4 * se


def test_small_batch_matches_enumeration(rng):
    nu = histogram_batch(3, 0.5, 2.0, 200_000, rng)
    se = nu.std(axis=0, ddof=1) / math.sqrt(nu.shape[0])
    exact = enumerate_exact(0.5, 2.0, 3).as_floats()
    for ell in (1, 2, 3):
        assert abs(nu[:, ell].mean() - exact[ell]) <= 4 * se[ell]


def test_normalized_histogram_examples():
    assert normalized_histogram(OccurrenceHistogram(2, {1: 2}, 2), 0.5) == {1: 2.0}
    assert normalized_histogram(OccurrenceHistogram(2, {2: 1}, 1), 0.5) == {2: 1.0}


def test_yule_simon_limit_at_alpha_zero():
    h = run(ModelParams(0.5, 0.0, 10**6, seed=11))
    phi = normalized_histogram(h, 0.5)
    assert abs(phi[1] - 2 / 3) <= 0.01
    assert abs(phi[2] - 1 / 6) <= 0.01


def test_merge_pools_counts():
    a = OccurrenceHistogram(4, {1: 2, 2: 1}, 3)
    b = OccurrenceHistogram(4, {4: 1}, 1)
    m = a.merge(b)
    assert m.counts == {1: 2, 2: 1, 4: 1} and m.replicates == 2
    m.check()
    with pytest.raises(ValueError):
        a.merge(OccurrenceHistogram(5, {5: 1}, 1))


def test_attraction_at_birth_and_for_repetitions(rng):
    words = grow_string(500, 0.4, 1.5, rng)
    _, first = np.unique(words, return_index=True)
    j = int(first[3]) + 1
    A, N = attraction_path(words, j, 1.5)
    assert A[j] == 1.0 and N[j] == 1
    assert np.all(A[:j] == 0) and np.all(N[:j] == 0)
    assert np.all(np.diff(N) >= 0)
    repeated = next(i + 1 for i in range(len(words)) if i not in set(first))
    A, N = attraction_path(words, repeated, 1.5)
    assert not A.any() and not N.any()


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.0, 3.0), st.integers(0, 10**6))
def test_occurrences_count_strict_increases_of_attraction(p, alpha, seed):
    words = grow_string(400, p, alpha, make_rng(seed))
    _, first = np.unique(words, return_index=True)
    for j in first[:10] + 1:
        A, N = attraction_path(words, int(j), alpha)
        assert N[-1] == count_strict_increases(A)


def test_tagged_run_conditions_on_new_words():
    params = ModelParams(0.3, 1.0, 2000, seed=5)
    trajs, attempts = run_tagged(params, [0.2, 0.6], [0.1, 0.2, 0.5, 1.0])
    assert attempts >= 1
    for tr in trajs:
        t, a, c = tr.times(), tr.attraction(), tr.occurrences()
        before = t < tr.u
        assert np.all(a[before] == 0) and np.all(c[before] == 0)
        assert np.all(c[~before] >= 1) and np.all(np.diff(c) >= 0)


def test_tagged_run_validates_inputs():
    params = ModelParams(0.3, 1.0, 100)
    with pytest.raises(ValueError):
        run_tagged(params, [1.5], [1.0])
    with pytest.raises(ValueError):
        run_tagged(params, [0.5], [1.0, 0.5])
    with pytest.raises(ValueError):
        run_tagged(params, [0.501, 0.505], [1.0])


def test_tagged_count_follows_yule_law():
    """At u = 1/2, alpha = 0 the tagged count is Z(p_bar ln 2) with Z a Yule
    process, i.e. geometric with success probability 2**-p_bar."""
    p, n, reps = 0.5, 4000, 3000
    counts = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        (tr,), _ = run_tagged(ModelParams(p, 0.0, n, seed=77), [0.5], [1.0], stream=r)
        counts[r] = tr.occurrences()[-1]
    q = 2 ** -(1 - p)
    top = 6
    observed = np.array([np.sum(counts == k) for k in range(1, top)] + [np.sum(counts >= top)])
    probs = np.array([q * (1 - q) ** (k - 1) for k in range(1, top)] + [(1 - q) ** (top - 1)])
    assert stats.chisquare(observed, reps * probs).pvalue > 0.001


def test_writers(tmp_path):
    h = run(ModelParams(0.5, 1.0, 1000, seed=2))
    path = tmp_path / "h.csv"
    write_histogram_csv(h, path, {"seed": 2})
    lines = path.read_text().splitlines()
    assert json.loads(lines[0][2:]) == {"seed": 2}
    rows = list(csv.DictReader(lines[1:]))
    assert {int(r["ell"]): int(r["count"]) for r in rows} == h.counts
    doc = histogram_json(h, 0.5, 1.0, 2)
    assert doc["seed"] == 2 and sum(doc["counts"].values()) == h.distinct
    trajs, _ = run_tagged(ModelParams(0.5, 1.0, 500, seed=2), [0.5], [0.5, 1.0])
    write_trajectories_csv(trajs, tmp_path / "t.csv", {"seed": 2})
    assert (tmp_path / "t.csv").read_text().splitlines()[1] == "u,t,A,N"
