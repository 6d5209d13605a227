import pytest

from ysm.rng import make_rng


@pytest.fixture
def rng(request):
    # one fixed stream per test, keyed by its name
    return make_rng(12345, sum(map(ord, request.node.name)))
