import pytest

from rayleigh_moments.basis import gram_schmidt_basis
from rayleigh_moments.psf import gaussian

# filled by test_acceptance.report()
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def psf():
    return gaussian(1.0)


@pytest.fixture(scope="session")
def basis8(psf):
    return gram_schmidt_basis(psf, 8)


@pytest.fixture(scope="session")
def basis10(psf):
    return gram_schmidt_basis(psf, 10)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
