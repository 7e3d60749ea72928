"""Shared fixtures: deterministic desk-scale systems and envelopes."""

import numpy as np
import pytest

from rsirl import Envelope, ExpertSpec, generate_envelope, generate_system


@pytest.fixture(scope="session")
def desk_system():
    return generate_system(4, 2, 3, seed=11, u_bound=1.0)


@pytest.fixture(scope="session")
def desk_envelope():
    return generate_envelope(3, 20, seed=11)


@pytest.fixture(scope="session")
def desk_spec(desk_system, desk_envelope):
    return ExpertSpec(system=desk_system, envelope=desk_envelope)


@pytest.fixture(scope="session")
def simplex3():
    return Envelope.simplex(3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
