# /tests/conftest.py

import numpy as np
import pytest

from src.core import lambdicke
from src.core.model import CoolingScheme, TrapMode

# Dimensionless units: Gamma = 1, every frequency below is in units of Gamma.


@pytest.fixture(scope="module")
def lambda_scheme() -> CoolingScheme:
    """Ideal three-level Lambda system: no spurious pi coupling, no D branch."""
    return CoolingScheme.single_eit(
        TrapMode("axial", 0.05),
        delta=2.0,
        rabi_pi=0.3,
        rabi_sigma=0.6,
        eta_pi=(0.1, 0.0),
        gamma_total=1.0,
        branch_s=1.0,
        branch_d=0.0,
        spurious_pi=False,
    )


@pytest.fixture(scope="module")
def deit_scheme() -> CoolingScheme:
    return CoolingScheme.double_eit(
        TrapMode("axial", 0.1),
        delta=2.0,
        rabi_pi=0.4,
        rabi_sigma=1.2,
        rabi_d=0.8,
        delta_s=0.3,
        eta_pi=(0.1, 0.0),
        eta_sigma=(0.0, 0.08),
        eta_d=(0.25, 0.0),
        gamma_total=1.0,
    )


@pytest.fixture(scope="module")
def lasers_off() -> CoolingScheme:
    return CoolingScheme.single_eit(TrapMode("axial", 0.1), delta=1.0, rabi_pi=0.0, rabi_sigma=0.0, gamma_total=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="module")
def balanced_lambda():
    """Lambda scheme at nu = 1 with equal pump and probe, bright state on the red sideband."""

    def build(eta: float) -> CoolingScheme:
        rabi = lambdicke.exact_bright_tuning(4.0, 1.0) / np.sqrt(2.0)
        return CoolingScheme.single_eit(
            TrapMode("axial", 1.0),
            delta=4.0,
            rabi_pi=rabi,
            rabi_sigma=rabi,
            eta_pi=(eta, 0.0),
            gamma_total=1.0,
            branch_s=1.0,
            branch_d=0.0,
            spurious_pi=False,
        )

    return build
