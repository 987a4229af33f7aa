import sys

import numpy as np
import pytest

from mgfsi.fsi_model import BoundaryConditions, FsiProblem, MaterialParams
from mgfsi.mesh import FLUID, SOLID, QuadMesh


def zero(x, y):
    return 0.0 * x


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square():
    return QuadMesh.rectangle(0, 1, 0, 1, 2, 2, markers=(1, 2, 3, 4))


@pytest.fixture
def hanging_mesh(square):
    # refine one corner cell twice: leaves hanging nodes and a level jump
    m = square.refine_marked([square.active[0]], siblings=False)
    return m.refine_marked([m.active[-1]], siblings=False)


def channel_mesh(nx=4, ny=2):
    """Fluid above a solid strip, markers bottom/right/top/left = 1..4."""
    return QuadMesh.tensor_grid(np.linspace(0, 2, nx + 1), np.linspace(0, 1, ny + 1),
                                material=lambda x, y: SOLID if y < 0.5 else FLUID,
                                markers=(1, 2, 3, 4))


@pytest.fixture
def small_fsi():
    """A tiny cavity with an elastic floor and a moving lid."""
    mesh = channel_mesh()
    lid = lambda x, y: x * (2 - x)  # noqa: E731
    bcs = BoundaryConditions(
        velocity={1: (zero, zero), 2: (zero, zero), 3: (lid, zero), 4: (zero, zero)},
        displacement={m: (zero, zero) for m in (1, 2, 3, 4)},
        pressure_pin=None)
    prm = MaterialParams(rho_f=1.0, nu_f=0.2, rho_s=1.0, mu_s=2.0, nu_s=0.4)
    return FsiProblem(mesh, prm, bcs)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
