import numpy as np
import pytest

from dipole_eddy.kernels import DipoleProblem
from dipole_eddy.mesh import Region, generate_nested_box_mesh
from dipole_eddy.state_adjoint import EddyModel

P_BAR = np.array([0.3, -0.2, 0.5])


def default_problem(**kw):
    args = dict(mu0=1.0, sigma0=1.0, omega=1.0, x0=[0.0, 0.0, 0.0], r=0.25,
                mu_map={Region.INSULATOR: 2.0})
    args.update(kw)
    return DipoleProblem(**args)


@pytest.fixture(scope="session")
def problem():
    return default_problem()


@pytest.fixture(scope="session")
def mesh4():
    return generate_nested_box_mesh(1.0, 0.5, 4)


@pytest.fixture(scope="session")
def mesh8():
    return generate_nested_box_mesh(1.0, 0.5, 8)


@pytest.fixture(scope="session")
def model4(mesh4, problem):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return EddyModel(mesh4, problem)


@pytest.fixture(scope="session")
def model8(mesh8, problem):
    return EddyModel(mesh8, problem)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def record_acceptance(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
