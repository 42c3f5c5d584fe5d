import numpy as np
import pytest

from fwguidance.vehicle import AircraftState, ControlCommand, ModelParameters, WindVector


@pytest.fixture(scope="session")
def params():
    return ModelParameters()


def random_valid_state(rng: np.random.Generator) -> AircraftState:
    """Sample a state well inside the validity region."""
    return AircraftState(
        n=rng.uniform(-500, 500),
        e=rng.uniform(-500, 500),
        d=rng.uniform(-200, -50),
        phi=rng.uniform(-0.7, 0.7),
        theta=rng.uniform(-0.25, 0.25),
        chi_a=rng.uniform(-np.pi, np.pi),
        V_a=rng.uniform(18.0, 38.0),
        gamma_a=rng.uniform(-0.25, 0.25),
        delta_T=rng.uniform(0.05, 0.95),
    )


def random_command(rng: np.random.Generator) -> ControlCommand:
    return ControlCommand(
        phi_c=rng.uniform(-0.7, 0.7),
        theta_c=rng.uniform(-0.17, 0.17),
        delta_Tc=rng.uniform(0.0, 1.0),
    )


def random_wind(rng: np.random.Generator, scale: float = 5.0) -> WindVector:
    return WindVector(*rng.uniform(-scale, scale, size=3))
