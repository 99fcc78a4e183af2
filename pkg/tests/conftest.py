import numpy as np
import pytest

from singleloop import testbed
from singleloop.problem_model import ProblemConstants


@pytest.fixture
def ref1():
    return testbed.ref1()


@pytest.fixture
def ref0():
    return testbed.ref0()


@pytest.fixture
def ref1_oracle(ref1):
    return testbed.as_oracle(ref1)


@pytest.fixture
def ref1_constants(ref1):
    return testbed.derive_constants(ref1)


@pytest.fixture
def ref0_constants(ref0):
    return testbed.derive_constants(ref0)


@pytest.fixture
def ref1_exact_constants():
    # the nominal values, without the strictness slack on H
    return ProblemConstants(mu_f=2.0, mu_g=2.0, L_g=2.0, H_omega=1.0, H_v=1.0, H=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
