import numpy as np
import pytest

from fracsolve.linalg import extremal_generalized_eigs
from fracsolve.mesh import assemble_mass, assemble_stiffness, build_mesh
from fracsolve.testcases import get_case


class System:
    def __init__(self, level, case="sine"):
        self.level = level
        self.mesh = build_mesh(level)
        self.S = assemble_stiffness(self.mesh)
        self.M = assemble_mass(self.mesh)
        self.case = get_case(case)
        self.f = self.case.load_vector(self.mesh)
        self._bounds = None

    @property
    def bounds(self):
        if self._bounds is None:
            self._bounds = extremal_generalized_eigs(self.S, self.M)
        return self._bounds


_CACHE = {}


def system(level, case="sine"):
    key = (level, case)
    if key not in _CACHE:
        _CACHE[key] = System(level, case)
    return _CACHE[key]


@pytest.fixture
def sys4():
    return system(4)


@pytest.fixture
def bump4():
    return system(4, "bump")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def q1_pencil_eigenvalues(level):
    """Generalized eigenvalues of the Q1 pencil on the uniform mesh, in closed form."""
    n = 2**level
    h = 1.0 / (n - 1)
    theta = np.arange(1, n - 1) * np.pi / (n - 1)
    mu = 6.0 * (1.0 - np.cos(theta)) / (h * h * (2.0 + np.cos(theta)))
    return np.sort((mu[:, None] + mu[None, :]).ravel())


def q1_mass_eigenvalues(level):
    n = 2**level
    h = 1.0 / (n - 1)
    theta = np.arange(1, n - 1) * np.pi / (n - 1)
    m = h / 6.0 * (4.0 + 2.0 * np.cos(theta))
    return np.sort((m[:, None] * m[None, :]).ravel())


ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    line = f"ACCEPT {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
