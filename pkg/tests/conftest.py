"""Shared fixtures.

The session-scoped model is shared by read-only tests (forward passes,
parameter counting). Anything that mutates parameters builds its own copy.
"""

import numpy as np
import pytest

from ddt.network import build, toy_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_model():
    return build(toy_config(), seed=0)
