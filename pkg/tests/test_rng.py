import numpy as np
import pytest
from hypothesis import given, strategies as st

from ysm.rng import GOLDEN_GAMMA, MASK64, make_rng, splitmix64, stream_seed


def test_splitmix64_reference_output():
    # first output of the reference SplitMix64 generator seeded with 0
    assert splitmix64(GOLDEN_GAMMA) == 0xE220A8397B1DCDAF


def test_stream_seed_formula():
    assert stream_seed(0, 0) == 0xE220A8397B1DCDAF
    assert stream_seed(5, 2) == splitmix64(5 + 3 * GOLDEN_GAMMA)


@given(st.integers(0, MASK64), st.integers(0, 10**6))
def test_streams_reproducible_and_distinct(seed, stream):
    a = make_rng(seed, stream).random(4)
    assert np.array_equal(a, make_rng(seed, stream).random(4))
    assert not np.array_equal(a, make_rng(seed, stream + 1).random(4))


@pytest.mark.parametrize("seed,stream", [(-1, 0), (MASK64 + 1, 0), (0, -1)])
def test_rejects_bad_seeds(seed, stream):
    with pytest.raises(ValueError):
        stream_seed(seed, stream)
