import math

import numpy as np
import pytest

from dfscontrol import (
    DensityMatrix,
    FourLevelParams,
    InitialStateAngles,
    build_model,
    dark_states,
    initial_state,
)

REFERENCE_PARAMS = dict(delta=3.0, omega=5.0, theta=math.pi / 3, phi=math.pi / 4)
REFERENCE_BETA_PI = (0.2, 0.35, 0.2)


@pytest.fixture(scope="session")
def ref_params():
    return FourLevelParams(**REFERENCE_PARAMS)


@pytest.fixture(scope="session")
def ref_model(ref_params):
    return build_model(ref_params)


@pytest.fixture(scope="session")
def decaying_model():
    return build_model(FourLevelParams(gammas=(0.1, 0.1, 0.1), **REFERENCE_PARAMS))


@pytest.fixture(scope="session")
def dark_basis(ref_params):
    return dark_states(ref_params.theta, ref_params.phi)


@pytest.fixture(scope="session")
def ref_state():
    return initial_state(InitialStateAngles.from_pi_units(REFERENCE_BETA_PI))


@pytest.fixture(scope="session")
def ref_rho(ref_state):
    return DensityMatrix.from_pure(ref_state)


def random_density(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    """Random full-rank density matrix (Wishart construction)."""
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / rho.trace().real


def random_hermitian(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (a + a.conj().T)
