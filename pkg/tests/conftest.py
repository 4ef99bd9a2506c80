import numpy as np
import pytest

from iongate.crystal import build_modes
from iongate.effective import compute_j_eff
from iongate.hamiltonian import LabParams, sideband_couplings
from iongate.operators import SpaceLayout
from iongate.propagate import SpectralPropagator

# acceptance lines collected during the run, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def lab():
    return LabParams.default()


@pytest.fixture(scope="session")
def modes2(lab):
    return build_modes(2, lab.omega_x, lab.omega_z)


@pytest.fixture(scope="session")
def couplings(lab, modes2):
    return sideband_couplings(lab, modes2)


@pytest.fixture(scope="session")
def eff(couplings):
    return compute_j_eff(couplings)


@pytest.fixture(scope="session")
def small_prop(lab, couplings):
    """Driven gate on a small Fock space (n_max = 3), cheap enough for property tests."""
    return SpectralPropagator(lab, couplings, SpaceLayout(2, 2, 3))


def random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return z / np.linalg.norm(z)
