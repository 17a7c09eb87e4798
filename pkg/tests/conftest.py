import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from linvec.ensemble import EnsembleSpec  # noqa: E402
from linvec.gfunc import GFunction  # noqa: E402
from linvec.spectrum import (atom_spectrum, ensemble_spectrum,  # noqa: E402
                             marchenko_pastur_spectrum)

settings.register_profile(
    "default", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Lines recorded by the acceptance suite, printed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mp_spectra():
    return {b: marchenko_pastur_spectrum(b) for b in (0.5, 1.0, 1.5)}


@pytest.fixture(scope="session")
def kron_spectrum():
    """Toeplitz-Kronecker average spectrum, c = 0.2 on both sides, beta = 1.5."""
    return ensemble_spectrum(EnsembleSpec(300, 200, "complex", "kronecker", 0.2, 0.2))


@pytest.fixture(scope="session")
def kron_g_real_11():
    """Real-field G for the Toeplitz-Kronecker ensemble at beta = 1.1, c = 0.2."""
    return GFunction(ensemble_spectrum(EnsembleSpec(110, 100, "real", "kronecker", 0.2, 0.2)),
                     "real")


@pytest.fixture(scope="session")
def mp_g_real(mp_spectra):
    return {b: GFunction(s, "real") for b, s in mp_spectra.items()}


@pytest.fixture(scope="session")
def atom_g():
    return GFunction(atom_spectrum([1.3]), "real")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
