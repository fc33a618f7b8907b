import numpy as np
import pytest

from quantred import actions, models, strata


@pytest.fixture(scope="session")
def e1():
    m = models.make_model([1], [1])
    return actions.make_action(m, [[1, -1]])


@pytest.fixture(scope="session")
def e2():
    m = models.make_model([2], [1])
    return actions.make_action(m, [[1, -1, 0]])


@pytest.fixture(scope="session")
def e3():
    m = models.make_model([1, 1], [1, 1])
    return actions.make_action(m, [[1, 0, -1, 0]], shift=["1/2"])


@pytest.fixture(scope="session")
def st1(e1):
    return strata.analyze(e1)


@pytest.fixture(scope="session")
def st2(e2):
    return strata.analyze(e2)


@pytest.fixture(scope="session")
def st3(e3):
    return strata.analyze(e3)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240711)
