import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadgcnet import dynamics as dyn
from conftest import random_state

angles = st.floats(-np.pi, np.pi, allow_nan=False)


def elementary(axis, a):
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


# -- rotation and Euler kinematics ---------------------------------------------

def test_rotation_zero_angles_is_identity():
    assert np.array_equal(dyn.rotation_body_to_world(np.zeros(3)), np.eye(3))


def test_pure_yaw_maps_body_x_to_world_y():
    r = dyn.rotation_body_to_world(np.array([0.0, 0.0, np.pi / 2]))
    np.testing.assert_allclose(r[:, 0], [0, 1, 0], atol=1e-15)


def test_rotation_matches_product_of_elementary_rotations():
    phi, theta, psi = 0.3, -0.2, 0.7
    expected = elementary("z", psi) @ elementary("y", theta) @ elementary("x", phi)
    np.testing.assert_allclose(dyn.rotation_body_to_world(np.array([phi, theta, psi])), expected,
                               atol=1e-15)


@given(angles, angles, angles)
def test_rotation_is_orthonormal(phi, theta, psi):
    r = dyn.rotation_body_to_world(np.array([phi, theta, psi]))
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12
    assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_euler_kinematics_level_is_identity():
    np.testing.assert_allclose(dyn.euler_kinematics(np.array([0.0, 0.0, 1.234])), np.eye(3),
                               atol=1e-15)


def test_euler_kinematics_raises_at_gimbal_lock():
    with pytest.raises(dyn.SingularAttitudeError):
        dyn.euler_kinematics(np.array([0.0, np.pi / 2 - 1e-12, 0.0]))


def body_rate_map(lam):
    """Omega = W(lam) lam_dot, the standard ZYX body-rate map."""
    phi, theta = lam[0], lam[1]
    return np.array([
        [1.0, 0.0, -np.sin(theta)],
        [0.0, np.cos(phi), np.sin(phi) * np.cos(theta)],
        [0.0, -np.sin(phi), np.cos(phi) * np.cos(theta)],
    ])


def test_euler_kinematics_inverts_body_rate_map():
    lam = np.array([0.4, 0.3, 0.0])
    np.testing.assert_allclose(dyn.euler_kinematics(lam) @ body_rate_map(lam), np.eye(3), atol=1e-14)


@given(angles, st.floats(-1.4, 1.4), angles)
def test_euler_kinematics_times_inverse_is_identity(phi, theta, psi):
    lam = np.array([phi, theta, psi])
    q = dyn.euler_kinematics(lam)
    np.testing.assert_allclose(q @ np.linalg.inv(q), np.eye(3), atol=1e-9)
    np.testing.assert_allclose(q @ body_rate_map(lam), np.eye(3), atol=1e-9)


# -- forces, moments, rotors ---------------------------------------------------

def test_forces_vanish_without_rotation_or_motion(params):
    assert np.array_equal(dyn.aero_forces(np.zeros(19), params), np.zeros(3))


def test_hover_thrust_balances_gravity(params):
    x = dyn.hover_state(params)
    x[dyn.ROTORS] = 7500.1
    assert dyn.aero_forces(x, params)[2] == pytest.approx(-9.81, abs=2e-3)
    assert dyn.aero_forces(dyn.hover_state(params), params)[2] == pytest.approx(-9.81, abs=1e-12)


def test_full_thrust_specific_force(params):
    x = np.zeros(19)
    x[dyn.ROTORS] = 12000.0
    assert dyn.aero_forces(x, params)[2] == pytest.approx(-4 * 4.36e-8 * 12000**2, rel=1e-14)
    assert dyn.aero_forces(x, params)[2] == pytest.approx(-25.11, abs=5e-3)


def test_equal_rotors_give_zero_moment(params):
    x = np.zeros(19)
    x[dyn.ROTORS] = 8000.0
    assert np.array_equal(dyn.aero_moments(x, np.zeros(4), params), np.zeros(3))


def test_roll_moment_from_rotor_imbalance(params):
    x = np.zeros(19)
    x[dyn.ROTORS] = [12000, 3000, 3000, 12000]
    m = dyn.aero_moments(x, np.zeros(4), params)
    assert m[0] == pytest.approx(1.41e-9 * (2 * 12000**2 - 2 * 3000**2), rel=1e-14)
    assert m[0] == pytest.approx(0.3807, abs=1e-4)


def test_yaw_rate_damping(params):
    x = np.zeros(19)
    x[dyn.ROTORS] = 7000.0
    x[11] = 1.0
    assert dyn.aero_moments(x, np.zeros(4), params)[2] == pytest.approx(-8.13e-4, rel=1e-12)


@pytest.mark.parametrize("omega,u,expected", [(12000.0, 1.0, 0.0), (7500.0, 0.5, 0.0),
                                              (3000.0, 1.0, 300000.0)])
def test_rotor_lag_examples(params, omega, u, expected):
    wdot = dyn.rotor_dynamics(np.full(4, omega), np.full(4, u), params)
    np.testing.assert_allclose(wdot, expected, atol=1e-9)


@given(st.floats(0, 1), st.floats(3000, 12000), st.floats(1e-4, 0.05))
def test_rotor_lag_converges_without_overshoot(u, omega0, dt):
    params = dyn.default_params()
    target = (params.omega_max - params.omega_min) * u + params.omega_min
    w = np.full(4, omega0)
    gap = abs(omega0 - target)
    for _ in range(30):
        # exact solution of the lag over dt
        w = w + (1 - np.exp(-dt / params.tau)) * dyn.rotor_dynamics(w, np.full(4, u), params) * params.tau
        new_gap = np.max(np.abs(w - target))
        assert new_gap <= gap + 1e-9
        assert np.all((w - target) * (omega0 - target) >= -1e-9)
        gap = new_gap


# -- full derivative -----------------------------------------------------------

def test_hover_is_equilibrium(params):
    x = dyn.hover_state(params)
    f = dyn.state_derivative(x, np.full(4, params.hover_throttle), params)
    np.testing.assert_allclose(f, 0.0, atol=1e-10)


def test_hover_at_7500_1_rpm_is_near_equilibrium(params):
    x = dyn.hover_state(params)
    x[dyn.ROTORS] = 7500.1
    u = np.full(4, (7500.1 - params.omega_min) / (params.omega_max - params.omega_min))
    f = dyn.state_derivative(x, u, params)
    assert np.max(np.abs(f)) < 1e-3


def test_external_moment_drives_roll_acceleration(params):
    x = dyn.hover_state(params, m_ext=(0.04, 0.0, 0.0))
    f = dyn.state_derivative(x, np.full(4, params.hover_throttle), params)
    np.testing.assert_allclose(f[dyn.RATES], [0.04 / 0.000906, 0.0, 0.0], rtol=1e-12, atol=1e-12)


def test_disturbance_is_constant_and_derivative_deterministic(params):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = random_state(rng, params)
        u = rng.uniform(0, 1, 4)
        f1 = dyn.state_derivative(x, u, params)
        f2 = dyn.state_derivative(x.copy(), u.copy(), params)
        assert np.array_equal(f1, f2)
        assert np.array_equal(f1[dyn.MEXT], np.zeros(3))


def test_jacobian_matches_central_differences(params):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x = random_state(rng, params)
        u = rng.uniform(0, 1, 4)
        jx, ju = dyn.state_jacobian(x, u, params)
        z = np.concatenate([x, u])
        jac = np.hstack([jx, ju])
        fd = np.zeros_like(jac)
        for i in range(z.size):
            h = 1e-6 * max(1.0, abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fd[:, i] = (dyn.state_derivative(zp[:19], zp[19:], params)
                        - dyn.state_derivative(zm[:19], zm[19:], params)) / (2 * h)
        # relative to the entry, floored at a small fraction of its row (rows
        # of the constant disturbance are identically zero)
        row = np.max(np.abs(jac), axis=1, keepdims=True)
        scale = np.maximum(np.abs(jac), np.maximum(1e-6 * row, 1e-12))
        err = np.abs(jac - fd) / scale
        assert np.all(np.isfinite(err))
        worst = max(worst, float(np.max(err)))
    assert worst < 1e-5
