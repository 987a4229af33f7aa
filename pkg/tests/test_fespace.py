import numpy as np
import pytest

from mgfsi.fespace import (ENRICHED_FIELDS, PRIMAL_FIELDS, DofHandler, FESpace, inject,
                           interpolate_down, lagrange_1d, nodes_1d, patch_interpolation,
                           prolongate, quadrature)


def quad2(x, y):
    return 1 + x - 2 * y + 3 * x * y + x**2 - y**2 + x**2 * y**2


def quartic(x, y):
    return x**4 - 2 * x**2 * y**3 + y**4 * x


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_lagrange_partition_of_unity_and_nodality(k):
    t = np.linspace(-1, 1, 11)
    phi, dphi = lagrange_1d(k, t)
    np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-13)
    np.testing.assert_allclose(dphi.sum(axis=1), 0.0, atol=1e-12)
    phi_n, _ = lagrange_1d(k, nodes_1d(k))
    np.testing.assert_allclose(phi_n, np.eye(k + 1), atol=1e-13)


def test_quadrature_integrates_degree_nine():
    pts, w = quadrature(9)
    assert np.isclose(w.sum(), 4.0)
    # int_[-1,1]^2 x^8 y^8 = (2/9)^2
    assert np.isclose(w @ (pts[:, 0] ** 8 * pts[:, 1] ** 8), (2 / 9) ** 2)


def test_dof_counts_on_conforming_grid(square):
    assert DofHandler(square, 1).n_dofs == 9
    assert DofHandler(square, 2).n_dofs == 25
    assert DofHandler(square, 4).n_dofs == 81


@pytest.mark.parametrize("k", [2, 4])
def test_hanging_constraints_reproduce_polynomials(hanging_mesh, k):
    fields = PRIMAL_FIELDS if k == 2 else ENRICHED_FIELDS
    f = quad2 if k == 2 else quartic
    space = FESpace(hanging_mesh, fields)
    assert space.n_hanging > 0
    x = space.interpolate([f] * 4 + [None])
    raw = np.zeros(space.n_dofs)
    for c in range(4):
        pts = space.handler(c).node_points()
        raw[space.comp_slice(c)] = f(pts[:, 0], pts[:, 1])
    # interpolant of an element of the space is already constraint consistent
    np.testing.assert_allclose(x, raw, atol=1e-12)
    rng = np.random.default_rng(0)
    for p in rng.uniform(0, 1, (20, 2)):
        assert np.isclose(space.evaluate(x, p, comps=[0])[0], f(*p), atol=1e-12)


def test_constrained_field_is_continuous(hanging_mesh, rng):
    space = FESpace(hanging_mesh)
    x = space.apply_constraints(rng.standard_normal(space.n_dofs))
    # points on the edges of the refined corner, evaluated from both sides
    for y in (0.1, 0.2, 0.3, 0.45):
        a = space.evaluate(x, (0.5 - 1e-12, y), comps=[0, 4])
        b = space.evaluate(x, (0.5 + 1e-12, y), comps=[0, 4])
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_constraints_are_a_projection(hanging_mesh, rng):
    space = FESpace(hanging_mesh)
    x = space.apply_constraints(rng.standard_normal(space.n_dofs))
    np.testing.assert_allclose(space.apply_constraints(x), x, atol=1e-14)


def test_inject_then_interpolate_is_identity(hanging_mesh, rng):
    low = FESpace(hanging_mesh)
    high = FESpace(hanging_mesh, ENRICHED_FIELDS)
    x = low.apply_constraints(rng.standard_normal(low.n_dofs))
    back = interpolate_down(high, low, inject(low, high, x))
    np.testing.assert_allclose(back, x, atol=1e-12)


def test_prolongation_is_exact_for_space_elements(square):
    coarse = FESpace(square)
    fine_mesh = square.refine_marked([square.active[1]]).uniform_refine()
    fine = FESpace(fine_mesh)
    xc = coarse.interpolate([quad2] * 4 + [lambda x, y: 2 * x - y])
    xf = prolongate(coarse, xc, fine)
    ref = fine.interpolate([quad2] * 4 + [lambda x, y: 2 * x - y])
    np.testing.assert_allclose(xf, ref, atol=1e-12)


def test_patch_interpolation_reproduces_quartics(square):
    mesh = square.uniform_refine()
    low = FESpace(mesh)
    high = FESpace(mesh, ENRICHED_FIELDS)
    xl = low.interpolate([quartic] * 4 + [quad2])
    xh = patch_interpolation(low, xl, high)
    ref = high.interpolate([quartic] * 4 + [quad2])
    np.testing.assert_allclose(xh, ref, atol=1e-11)


def test_affine_map_round_trip(hanging_mesh, rng):
    space = FESpace(hanging_mesh)
    amap = space.affine_map({0: 1.5, 3: -2.0})
    x = amap.expand(rng.standard_normal(amap.n_free))
    assert x[0] == 1.5 and x[3] == -2.0
    np.testing.assert_allclose(space.apply_constraints(x), x, atol=1e-13)
    np.testing.assert_allclose(amap.expand(amap.restrict(x)), x, atol=1e-13)
