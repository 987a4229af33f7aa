import warnings

import numpy as np
import pytest

from mgfsi.goals import (GoalSpec, boundary_flux, drag_lift, eval_goal, goal_derivative,
                         point_value)
from mgfsi.mesh import MeshError
from mgfsi.multigoal import (CombinedGoal, DegenerateGoalWarning, combined_derivative,
                             compute_signs, eval_combined, goal_values, sign)


def _state(prob, funcs):
    return prob.space.interpolate(funcs)


def test_boundary_flux_of_uniform_flow(small_fsi):
    one = lambda x, y: 1.0 + 0 * x  # noqa: E731
    x = _state(small_fsi, [one, None, None, None, None])
    assert np.isclose(eval_goal(boundary_flux(2), small_fsi, x), 1.0)
    assert np.isclose(eval_goal(boundary_flux(4), small_fsi, x), -1.0)
    assert np.isclose(eval_goal(boundary_flux(3), small_fsi, x), 0.0)


def test_interface_force_of_pressure_and_shear(small_fsi):
    prm = small_fsi.params
    x = _state(small_fsi, [lambda x, y: y, None, None, None, lambda x, y: 3.0 + 0 * x])
    # fluid side normal on the interface y = 0.5 is (0, -1), length 2
    drag = eval_goal(drag_lift(0, interface=True), small_fsi, x)
    lift = eval_goal(drag_lift(1, interface=True), small_fsi, x)
    assert np.isclose(drag, 2 * prm.rho_f * prm.nu_f)
    assert np.isclose(lift, -2 * 3.0)


def test_force_on_deformed_configuration(small_fsi):
    # a uniform stretch u = (s x, 0) scales the interface length by (1 + s)
    s = 0.1
    x = _state(small_fsi, [None, None, lambda x, y: s * x, None, lambda x, y: 1.0 + 0 * x])
    lift = eval_goal(drag_lift(1, interface=True), small_fsi, x)
    assert np.isclose(lift, -2 * (1 + s))


def test_point_value_and_derivative(small_fsi):
    x = _state(small_fsi, [None, None, None, lambda x, y: x * y, None])
    g = point_value("uy", (0.7, 0.3))
    assert np.isclose(eval_goal(g, small_fsi, x), 0.21)
    d = goal_derivative(g, small_fsi, x)
    assert np.isclose(d.sum(), 1.0)
    assert np.isclose(d @ x, 0.21)
    assert np.all(d[small_fsi.space.comp_slice(0)] == 0)


@pytest.mark.parametrize("goal", [drag_lift(0, interface=True), drag_lift(1, interface=True),
                                  boundary_flux(2)])
def test_goal_derivative_matches_differences(small_fsi, rng, goal):
    prob = small_fsi
    x = prob.initial_guess() + 0.01 * rng.standard_normal(prob.space.n_dofs)
    x = prob.space.apply_constraints(x)
    d = goal_derivative(goal, prob, x)
    h = 1e-6
    for _ in range(5):
        dx = prob.space.apply_constraints(rng.standard_normal(prob.space.n_dofs))
        fd = (eval_goal(goal, prob, x + h * dx) - eval_goal(goal, prob, x - h * dx)) / (2 * h)
        assert np.isclose(d @ dx, fd, rtol=1e-6, atol=1e-9)


def test_goal_spec_validation(small_fsi):
    with pytest.raises(ValueError):
        GoalSpec("energy", "e")
    with pytest.raises(ValueError):
        GoalSpec("force", "drag")
    with pytest.raises(MeshError):
        eval_goal(drag_lift(0, markers=(7,)), small_fsi, small_fsi.initial_guess())


def test_sign_convention():
    np.testing.assert_array_equal(sign([-2.0, 0.0, 3.0]), [-1.0, 1.0, 1.0])


def test_compute_signs_and_degenerate_warning():
    goals = [point_value("p", (0, 0), "a"), point_value("p", (1, 0), "b")]
    with pytest.warns(DegenerateGoalWarning, match="'b'"):
        s, act = compute_signs(goals, [1.0, 2.0], [0.5, 2.0])
    np.testing.assert_array_equal(s, [-1.0, 1.0])
    np.testing.assert_array_equal(act, [True, False])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s, act = compute_signs(goals, [1.0, 2.0], [1.5, 1.0])
    np.testing.assert_array_equal(s, [1.0, -1.0])
    assert act.all()


def test_combined_goal_weights():
    goals = [point_value("p", (0, 0), "a"), point_value("p", (1, 0), "b")]
    cg = CombinedGoal(goals, [0.5, 2.0], sigma=[1, -1], active=[True, False])
    np.testing.assert_array_equal(cg.w, [0.5, 0.0])
    np.testing.assert_array_equal(cg.with_weights([1.0, 1.0]).w, [1.0, 0.0])
    with pytest.raises(ValueError):
        CombinedGoal(goals, [1.0])
    with pytest.raises(ValueError):
        CombinedGoal(goals, [1.0, -1.0])
    with pytest.raises(ValueError):
        CombinedGoal(goals, [1.0, 1.0], sigma=[1, 0])


def test_combined_value_and_derivative_are_linear(small_fsi, rng):
    goals = [point_value("p", (0.3, 0.8), "a"), drag_lift(1, interface=True)]
    x = small_fsi.space.apply_constraints(0.01 * rng.standard_normal(small_fsi.space.n_dofs))
    cg = CombinedGoal(goals, [0.25, 0.75], sigma=[-1, 1])
    vals = goal_values(goals, small_fsi, x)
    assert np.isclose(eval_combined(cg, small_fsi, x), -0.25 * vals[0] + 0.75 * vals[1])
    assert np.isclose(eval_combined(cg, small_fsi, x, signed=False), cg.omega @ vals)
    d = combined_derivative(cg, small_fsi, x)
    ref = -0.25 * goal_derivative(goals[0], small_fsi, x) \
        + 0.75 * goal_derivative(goals[1], small_fsi, x)
    np.testing.assert_allclose(d, ref, atol=1e-14)
