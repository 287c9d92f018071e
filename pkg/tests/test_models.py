import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualplan.models import (build_double_integrator, build_model, build_planar_manipulation, observe,
                             step_truth)

finite = st.floats(-50, 50, allow_nan=False)


def test_double_integrator_settings(di):
    assert di.dt == 0.1 and di.u_max == 300.0
    assert di.state_dim == 2 and di.param_dim == 1 and di.obs_dim == 2
    np.testing.assert_array_equal(di.R, np.zeros((2, 2)))


def test_double_integrator_matrices(di):
    np.testing.assert_array_equal(di.A([2.0]), [[1.0, 0.1], [0.0, 1.0]])
    np.testing.assert_allclose(di.B([2.0]).ravel(), [0.01 / 4, 0.05], rtol=1e-15)
    np.testing.assert_array_equal(di.C([2.0]), np.eye(2))
    np.testing.assert_array_equal(di.D([2.0]), np.zeros((2, 1)))


def test_zero_state_is_fixed_point(di):
    np.testing.assert_array_equal(di.f([0.0, 0.0, 1.0], [0.0]), [0.0, 0.0, 1.0])


def test_coasting_step(di):
    np.testing.assert_allclose(di.f([0.0, 1.0, 2.0], [0.0])[:2], [0.1, 1.0], rtol=1e-15)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(dt=-0.1), dict(u_max=0.0), dict(u_max=-5.0)])
def test_builders_reject_bad_settings(kwargs):
    with pytest.raises(ValueError):
        build_double_integrator(**kwargs)
    with pytest.raises(ValueError):
        build_planar_manipulation(**kwargs)


def test_unknown_model_name():
    with pytest.raises(ValueError):
        build_model("3d")


def test_noise_matrices_validated(di):
    with pytest.raises(ValueError):
        dataclasses.replace(di, Q=np.array([[1.0, 0.0], [0.5, 1.0]]))
    with pytest.raises(ValueError):
        dataclasses.replace(di, R=-np.eye(2))


def test_planar_settings(pm):
    assert pm.u_max == 100.0
    assert (pm.state_dim, pm.param_dim, pm.control_dim, pm.obs_dim) == (6, 5, 3, 9)


def test_planar_input_matrix_without_offset(pm):
    B = pm.B([1.0, 1.0, 1.0, 0.0, 0.0], theta=0.0)
    np.testing.assert_allclose(B[3:], 0.1 * np.eye(3), atol=1e-15)
    np.testing.assert_array_equal(B[:3], np.zeros((3, 3)))


def test_planar_torque_arm_entry(pm):
    B = pm.B([1.0, 2.0, 1.0, 1.0, 0.0], theta=np.pi / 2)
    # (dt/J)(cos(theta) ry + sin(theta) rx)
    assert B[5, 0] == pytest.approx(0.05, abs=1e-15)


def test_planar_friction_damps_velocity(pm):
    A = pm.A([2.0, 1.0, 4.0, 0.0, 0.0])
    assert A[3, 3] == A[4, 4] == pytest.approx(1 - 4.0 * 0.1 / 2.0)
    assert A[5, 5] == 1.0
    np.testing.assert_array_equal(A[:3, 3:], 0.1 * np.eye(3))


@given(st.floats(-np.pi, np.pi), st.floats(1, 10), st.floats(-2, 2), st.floats(-2, 2))
def test_input_matrix_is_2pi_periodic(theta, J, rx, ry):
    pm = build_planar_manipulation()
    p = [2.0, J, 1.0, rx, ry]
    np.testing.assert_allclose(pm.B(p, theta + 2 * np.pi), pm.B(p, theta), atol=1e-13)


def test_observe_exact_1d(di, rng):
    np.testing.assert_array_equal(observe(di, [3.0, -1.0, 5.0], [0.0], rng), [3.0, -1.0])


def test_observe_center_velocity(pm, rng):
    s = np.array([1.0, 2.0, 0.3, 0.7, -0.4, 0.0, 2.0, 1.0, 1.0, 0.0, 0.0])
    o = observe(pm, s, np.zeros(3), rng)
    # observation layout: position, heading, velocity, rate, accelerations
    np.testing.assert_allclose(o[3:5], [0.7, -0.4])
    np.testing.assert_allclose(o[:3], [1.0, 2.0, 0.3])


def test_observe_offset_sensor_rotating(rng):
    pm = build_planar_manipulation(sensor_offset=(1.0, 0.0))
    s = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 1.0, 0.0, 0.0])
    o = observe(pm, s, np.zeros(3), rng)
    # omega x r_b for omega = 2 about z and r_b = (1, 0)
    np.testing.assert_allclose(o[3:5], [0.0, 2.0], atol=1e-15)
    # centripetal acceleration -omega^2 r_b
    np.testing.assert_allclose(o[6:8], [-4.0, 0.0], atol=1e-15)


def test_observation_matches_linear_form(pm, rng):
    for _ in range(20):
        x = rng.uniform(-3, 3, 6)
        p = np.concatenate([rng.uniform(1, 5, 3), rng.uniform(-1, 1, 2)])
        u = rng.uniform(-100, 100, 3)
        expected = pm.C(p) @ x + pm.D(p, x[2]) @ u
        np.testing.assert_allclose(pm.h(np.concatenate([x, p]), u), expected, atol=1e-12)


def test_linear_form_requires_centered_sensor():
    pm = build_planar_manipulation(sensor_offset=(0.1, 0.0))
    with pytest.raises(ValueError):
        pm.C([1.0] * 5)


def test_step_truth_force_example(di, rng):
    s = step_truth(di, [0.0, 0.0, 1.0], [10.0], rng)
    np.testing.assert_allclose(s, [0.05, 1.0, 1.0], rtol=1e-14)


def test_step_truth_equilibrium(di, pm, rng):
    np.testing.assert_array_equal(step_truth(di, [0.0, 0.0, 3.0], [0.0], rng)[:2], [0.0, 0.0])
    s = np.concatenate([np.zeros(6), [2.0, 2.0, 2.0, 0.3, 0.1]])
    np.testing.assert_array_equal(step_truth(pm, s, np.zeros(3), rng)[:6], np.zeros(6))


def test_step_truth_saturates(di, rng):
    a = step_truth(di, [0.0, 0.0, 1.0], [1e6], rng)
    b = step_truth(di, [0.0, 0.0, 1.0], [300.0], rng)
    np.testing.assert_array_equal(a, b)


def test_parameters_constant_without_drift(di):
    model = di.with_process_noise(2.0)
    rng = np.random.default_rng(0)
    s = np.array([1.0, 1.0, 4.2])
    for _ in range(50):
        s = step_truth(model, s, rng.uniform(-300, 300, 1), rng)
        assert s[2] == 4.2


def test_process_noise_only_on_state(di):
    model = di.with_process_noise(0.5)
    np.testing.assert_array_equal(model.Q, 0.25 * np.eye(2))
    np.testing.assert_array_equal(model.noise_cov[2], np.zeros(3))
    with pytest.raises(ValueError):
        di.with_process_noise(-1.0)


def test_noiseless_truth_is_reproducible(pm):
    s0 = np.concatenate([pm.default_initial_state, [2.0, 3.0, 1.5, 0.2, -0.1]])
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(9)
        s = s0.copy()
        for k in range(30):
            s = step_truth(pm, s, [np.sin(k) * 50, 20.0, -10.0], rng)
        runs.append(s)
    np.testing.assert_array_equal(runs[0], runs[1])


@given(st.lists(st.tuples(finite, finite, finite), min_size=2, max_size=2),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(1, 10))
def test_double_integrator_is_linear(pts, a, b, m):
    di = build_double_integrator()
    (x1, v1, u1), (x2, v2, u2) = pts
    lhs = di.f([a * x1 + b * x2, a * v1 + b * v2, m], [a * u1 + b * u2])[:2]
    rhs = a * di.f([x1, v1, m], [u1])[:2] + b * di.f([x2, v2, m], [u2])[:2]
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


@given(st.lists(finite, min_size=6, max_size=6), st.lists(finite, min_size=6, max_size=6),
       st.floats(-np.pi, np.pi), st.floats(0, 1))
def test_planar_affine_in_state_and_control_at_fixed_heading(xa, xb, theta, a):
    pm = build_planar_manipulation()
    p = np.array([2.0, 1.5, 1.2, 0.3, -0.2])
    x1, x2 = np.array(xa), np.array(xb)
    x1[2] = x2[2] = theta
    u1, u2 = x1[3:] * 2, x2[:3] * 2
    f = lambda x, u: pm.f(np.concatenate([x, p]), u)[:6]
    lhs = f(a * x1 + (1 - a) * x2, a * u1 + (1 - a) * u2)
    rhs = a * f(x1, u1) + (1 - a) * f(x2, u2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(f(x1, u1), pm.A(p) @ x1 + pm.B(p, theta) @ u1, rtol=1e-12, atol=1e-12)


@given(st.floats(-200, 200), st.floats(1, 20))
def test_floors_hold_after_step(drift_mean, sigma):
    pm = build_planar_manipulation()
    model = dataclasses.replace(pm, P_drift=sigma ** 2 * np.eye(5))
    rng = np.random.default_rng(int(abs(drift_mean) * 1000))
    s = np.concatenate([np.zeros(6), [1.0, 1.0, 1.0, 0.0, 0.0]])
    for _ in range(5):
        s = step_truth(model, s, np.full(3, drift_mean), rng)
        assert np.all(s[6:9] >= 1.0)
