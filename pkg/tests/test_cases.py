from importlib import resources

import numpy as np
import pytest

from mgfsi.cases import (BUILTIN, builtin_case, case_from_text, case_to_text, expression,
                         fsi1_mesh, load_case, load_geometry, verify_case_oracle)
from mgfsi.mesh import FLUID, SOLID, MeshError


@pytest.mark.parametrize("name", sorted(BUILTIN))
def test_text_round_trip(name):
    case = builtin_case(name)
    text = case_to_text(case)
    back = case_from_text(text)
    assert case_to_text(back) == text
    assert back.omega == case.omega
    assert [g.name for g in back.goals] == [g.name for g in case.goals]
    assert back.params.as_dict() == case.params.as_dict()
    assert back.jc_reference_value() == case.jc_reference_value()


@pytest.mark.parametrize("name", ["ex1", "ex2", "ex3"])
def test_bundled_configs_match_builtins(name):
    text = resources.files("mgfsi").joinpath("data", f"{name}.cfg").read_text()
    assert text == case_to_text(builtin_case(name))


def test_unknown_case_and_geometry():
    with pytest.raises(KeyError):
        builtin_case("ex9")
    with pytest.raises(KeyError):
        load_geometry("builtin:nowhere")
    with pytest.raises(OSError):
        load_case("/nonexistent/case.cfg")


def test_missing_marker_rejected():
    text = case_to_text(builtin_case("ex1")).replace("[boundary.4]", "[boundary.7]")
    with pytest.raises(MeshError):
        case_from_text(text).build_mesh()


def test_expression_parsing():
    f = expression("x*(2 - x) + y**2")
    np.testing.assert_allclose(f(np.array([0.5, 1.0]), np.array([1.0, 0.0])), [1.75, 1.0])
    assert expression("0.25") == 0.25
    g = expression("Piecewise((1, x < 0.5), (2, True))")
    np.testing.assert_allclose(g(np.array([0.2, 0.8]), np.zeros(2)), [1.0, 2.0])


def test_reference_values():
    ex1 = builtin_case("ex1")
    ref = ex1.reference_values()
    assert np.isclose(ex1.jc_reference_value(), 0.5 * ref.sum(), rtol=1e-12)
    assert builtin_case("ex2").reference_values() is None


def test_fsi1_geometry():
    m = fsi1_mesh()
    act = m.active
    area = m.cell_area()
    mat = m.cell_material[act]
    # channel minus cylinder; straight-sided cells miss a thin sliver of the circle
    assert np.isclose(area.sum(), 2.5 * 0.41 - np.pi * 0.05**2, rtol=2e-3)
    # beam from the cylinder surface to x = 0.6, thickness 0.02
    x0 = 0.2 + np.sqrt(0.05**2 - 0.01**2)
    assert np.isclose(area[mat == SOLID].sum(), (0.6 - x0) * 0.02, rtol=1e-2)
    assert np.all(mat[area > 0] >= FLUID)
    assert sorted({mk for _, _, mk in m.boundary_faces()}) == [1, 2, 3, 4]


def test_manufactured_forcing_balances_momentum():
    # independent check of the forcing: strong residual by central differences
    exact, forcing = verify_case_oracle("verify_stokes")
    v = exact["values"]
    fx, fy = forcing["f_f"]
    h = 1e-4
    x, y = 0.37, 0.61

    def sig(i, j, x, y):
        comps = ("vx", "vy")
        d = lambda c, k: ((v[c](x + h * (k == 0), y + h * (k == 1))  # noqa: E731
                           - v[c](x - h * (k == 0), y - h * (k == 1))) / (2 * h))
        s = d(comps[i], j) + d(comps[j], i)
        return s - (v["p"](x, y) if i == j else 0.0)

    for i, f in ((0, fx), (1, fy)):
        div = sum((sig(i, j, x + h * (j == 0), y + h * (j == 1))
                   - sig(i, j, x - h * (j == 0), y - h * (j == 1))) / (2 * h) for j in range(2))
        assert np.isclose(-div, f(np.array(x), np.array(y)), atol=1e-5)
