"""Tests for the Euler engine, noise streams, Jacobians and built-in models."""

import math

import numpy as np
import pytest

import condmc as cm
from condmc.errors import NonFiniteState, SingularJacobian
from condmc.sde import _noise_block

E_INV = math.exp(-1.0)            # 0.36787944117144233
OU_VAR_T1 = 0.4323323583816936    # sigma^2 (1 - e^{-2 theta}) / (2 theta) at theta=sigma=1


def make_custom(drift, drift_dtheta, drift_dx, sigma=1.0):
    sig = np.array([[sigma]])
    zeros3 = np.zeros((1, 1, 1))
    return cm.SdeModel(
        drift=drift,
        drift_dtheta=drift_dtheta,
        drift_dx=drift_dx,
        diffusion=lambda x, t: sig,
        diffusion_dx=lambda x, t: zeros3,
        state_dim=1,
        noise_dim=1,
    )


# ---------------------------------------------------------------------------
# TimeGrid


def test_grid_uniform_and_exact():
    grid = cm.TimeGrid(2.0, 7)
    times = grid.times
    assert times[0] == 0.0 and times[-1] == 2.0
    assert np.all(np.diff(times) > 0)
    assert abs(grid.dt * grid.steps - grid.horizon) <= np.finfo(float).eps * grid.horizon


@pytest.mark.parametrize("horizon,steps", [(0.0, 10), (-1.0, 10), (1.0, 0), (math.inf, 4)])
def test_grid_rejects_bad_arguments(horizon, steps):
    with pytest.raises(ValueError):
        cm.TimeGrid(horizon, steps)


# ---------------------------------------------------------------------------
# noise


def test_noise_regeneration_is_bit_identical():
    grid = cm.TimeGrid(1.0, 4)
    a = cm.generate_noise(7, 0, grid, 1)
    b = cm.generate_noise(7, 0, grid, 1)
    assert np.array_equal(a.increments, b.increments)
    assert a.increments.shape == (4, 1)


def test_noise_variance_matches_dt():
    grid = cm.TimeGrid(10000.0, 1_000_000)  # dt = 0.01
    inc = cm.generate_noise(7, 0, grid, 1).increments.ravel()
    n = inc.size
    var = inc.var(ddof=1)
    se = 0.01 * math.sqrt(2.0 / (n - 1))
    assert abs(var - 0.01) <= 3.0 * se
    assert abs(inc.mean()) <= 3.0 * math.sqrt(0.01) / math.sqrt(n)


def test_noise_streams_independent_across_paths():
    grid = cm.TimeGrid(1.0, 1_000_000)
    a = cm.generate_noise(7, 0, grid, 1).increments.ravel()
    b = cm.generate_noise(7, 1, grid, 1).increments.ravel()
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) <= 3.0 / math.sqrt(a.size)


def test_noise_block_rows_match_single_streams():
    grid = cm.TimeGrid(1.0, 32)
    block = _noise_block(99, np.arange(5, 12), grid, 2)
    for row, idx in enumerate(range(5, 12)):
        single = cm.generate_noise(99, idx, grid, 2).increments
        assert np.array_equal(block[row], single)


# ---------------------------------------------------------------------------
# simulate_path


def test_random_walk_degenerate_model():
    grid = cm.TimeGrid(1.0, 50)
    model = make_custom(
        drift=lambda x, t, th: np.zeros_like(x),
        drift_dtheta=lambda x, t, th: np.zeros_like(x),
        drift_dx=lambda x, t, th: np.zeros((1, 1)),
    )
    noise = cm.generate_noise(3, 0, grid, 1)
    b = cm.simulate_path(model, 0.5, 0.0, grid, noise)
    walk = np.concatenate([[0.0], np.cumsum(noise.increments[:, 0])])
    np.testing.assert_allclose(b.states[:, 0], walk, rtol=0, atol=1e-12)


def test_euler_recursion_exact_one_step():
    grid = cm.TimeGrid(1.0, 10)
    model = cm.ou_model(0.7)
    noise = cm.generate_noise(11, 2, grid, 1)
    b = cm.simulate_path(model, 1.3, 0.4, grid, noise)
    x0 = b.states[0, 0]
    expected = x0 + grid.dt * (-1.3 * x0) + 0.7 * noise.increments[0, 0]
    assert b.states[1, 0] == expected
    assert b.states[0, 0] == 0.4


def test_ou_terminal_variance_closed_form():
    grid = cm.TimeGrid(1.0, 200)
    batch = cm.simulate_paths(cm.ou_model(1.0), 1.0, 0.0, grid, 100_000, 7)
    xt = batch.states[:, -1, 0]
    var = xt.var(ddof=1)
    se = var * math.sqrt(2.0 / (xt.size - 1))
    # 3 SE plus an O(dt) discretization allowance
    assert abs(var - OU_VAR_T1) <= 3.0 * se + 2.0 * grid.dt


def test_ou_jacobian_matches_exponential():
    grid = cm.TimeGrid(1.0, 1000)
    noise = cm.generate_noise(1, 0, grid, 1)
    b = cm.simulate_path(cm.ou_model(1.0), 1.0, 0.0, grid, noise, with_jacobian=True)
    y_T = b.jacobians.y[-1, 0, 0]
    assert abs(y_T - E_INV) <= 2e-3
    step_product = 1.0
    for _ in range(grid.steps):
        step_product *= 1.0 + grid.dt * -1.0
    assert y_T == step_product
    # Z_k Y_k = I
    prod = b.jacobians.z * b.jacobians.y
    np.testing.assert_allclose(prod[:, 0, 0], 1.0, rtol=1e-8)


def test_jacobian_bump_consistency():
    # D_s X_T = Y_T Z_s sigma(X_s) vs central difference in the increment at s
    grid = cm.TimeGrid(1.0, 1000)
    model = cm.ou_model(1.0)
    noise = cm.generate_noise(5, 3, grid, 1)
    b = cm.simulate_path(model, 0.5, 0.3, grid, noise, with_jacobian=True)
    eps = 1e-5
    for s in (0, 400, 999):
        formula = b.jacobians.y[-1, 0, 0] * b.jacobians.z[s, 0, 0] * 1.0
        up = noise.increments.copy()
        dn = noise.increments.copy()
        up[s, 0] += eps
        dn[s, 0] -= eps
        xp = cm.simulate_path(model, 0.5, 0.3, grid, cm.NoisePath(up, 5, 3)).states[-1, 0]
        xm = cm.simulate_path(model, 0.5, 0.3, grid, cm.NoisePath(dn, 5, 3)).states[-1, 0]
        fd = (xp - xm) / (2.0 * eps)
        assert abs(formula - fd) / abs(fd) <= 1e-3


def test_weak_order_error_halves_with_dt():
    # theta=2, sigma=0.1, x0=1: E[X_1] = e^{-2}; Euler bias scales like dt
    errors = []
    for steps in (20, 40):
        grid = cm.TimeGrid(1.0, steps)
        batch = cm.simulate_paths(cm.ou_model(0.1), 2.0, 1.0, grid, 100_000, 11)
        mean = cm.fsum(batch.states[:, -1, 0]) / batch.n_paths
        errors.append(abs(mean - math.exp(-2.0)))
    ratio = errors[0] / errors[1]
    assert 1.5 <= ratio <= 3.0


def test_non_finite_state_reports_step():
    grid = cm.TimeGrid(1.0, 20)
    model = make_custom(
        drift=lambda x, t, th: x ** 3,
        drift_dtheta=lambda x, t, th: np.zeros_like(x),
        drift_dx=lambda x, t, th: 3.0 * x[..., None] ** 2,
    )
    noise = cm.generate_noise(0, 0, grid, 1)
    with np.errstate(over="ignore"), pytest.raises(NonFiniteState) as err:
        cm.simulate_path(model, 0.0, 50.0, grid, noise)
    assert 1 <= err.value.step <= 20


def test_singular_jacobian_detected():
    grid = cm.TimeGrid(1.0, 10)  # dt = 0.1
    model = make_custom(
        drift=lambda x, t, th: -10.0 * x,
        drift_dtheta=lambda x, t, th: np.zeros_like(x),
        drift_dx=lambda x, t, th: np.full((1, 1), -10.0),  # 1 + dt * (-10) = 0
    )
    noise = cm.generate_noise(0, 1, grid, 1)
    with pytest.raises(SingularJacobian):
        cm.simulate_path(model, 0.0, 1.0, grid, noise, with_jacobian=True)


# ---------------------------------------------------------------------------
# batch engine equivalence


def test_batch_rows_bit_identical_to_single_paths():
    grid = cm.TimeGrid(1.0, 64)
    model = cm.ou_model(1.0)
    batch = cm.simulate_paths(model, 1.0, 0.2, grid, 6, 17, with_jacobian=True)
    for i in range(6):
        noise = cm.generate_noise(17, i, grid, 1)
        single = cm.simulate_path(model, 1.0, 0.2, grid, noise, with_jacobian=True)
        assert np.array_equal(batch.path(i).states, single.states)
        assert np.array_equal(batch.path(i).jacobians.y, single.jacobians.y)
        assert np.array_equal(batch.path(i).jacobians.z, single.jacobians.z)


def test_batch_two_dimensional_model():
    grid = cm.TimeGrid(1.0, 50)
    model = cm.ou_model(0.5, dim=2)
    batch = cm.simulate_paths(model, 0.7, [0.1, -0.2], grid, 4, 3, with_jacobian=True)
    noise = cm.generate_noise(3, 2, grid, 2)
    single = cm.simulate_path(model, 0.7, [0.1, -0.2], grid, noise, with_jacobian=True)
    assert np.array_equal(batch.path(2).states, single.states)
    assert np.array_equal(batch.path(2).jacobians.z, single.jacobians.z)


def test_simulation_is_deterministic():
    grid = cm.TimeGrid(1.0, 30)
    a = cm.simulate_paths(cm.ou_model(1.0), 1.0, 0.0, grid, 8, 23)
    b = cm.simulate_paths(cm.ou_model(1.0), 1.0, 0.0, grid, 8, 23)
    assert np.array_equal(a.states, b.states)


# ---------------------------------------------------------------------------
# resume_path


def test_resume_noop_matches_simulate():
    grid = cm.TimeGrid(1.0, 40)
    model = cm.ou_model(1.0)
    noise = cm.generate_noise(9, 4, grid, 1)
    base = cm.simulate_path(model, 1.0, 0.3, grid, noise, with_jacobian=True)
    again = cm.resume_path(base, 0, base.states[0], noise)
    assert np.array_equal(again.states, base.states)
    assert np.array_equal(again.jacobians.y, base.jacobians.y)


def test_resume_additive_shift_for_zero_drift():
    grid = cm.TimeGrid(1.0, 40)
    model = make_custom(
        drift=lambda x, t, th: np.zeros_like(x),
        drift_dtheta=lambda x, t, th: np.zeros_like(x),
        drift_dx=lambda x, t, th: np.zeros((1, 1)),
    )
    noise = cm.generate_noise(2, 0, grid, 1)
    base = cm.simulate_path(model, 0.0, 0.0, grid, noise)
    delta = 0.125  # power of two keeps the shift exact in floating point
    k = 13
    up = cm.resume_path(base, k, base.states[k] + delta, noise)
    assert np.array_equal(up.states[:k], base.states[:k])
    assert up.states[-1, 0] - base.states[-1, 0] == delta


def test_resume_crn_branches_contract_at_ou_rate():
    grid = cm.TimeGrid(1.0, 100)
    model = cm.ou_model(1.0)
    theta = 1.0
    noise = cm.generate_noise(21, 6, grid, 1)
    base = cm.simulate_path(model, theta, 0.0, grid, noise)
    k = 30
    delta = 0.5
    hi = cm.resume_path(base, k, base.states[k] + delta, noise)
    lo = cm.resume_path(base, k, base.states[k] - delta, noise)
    gap = hi.states[-1, 0] - lo.states[-1, 0]
    exact = 2.0 * delta * (1.0 - theta * grid.dt) ** (grid.steps - k)
    assert abs(gap - exact) <= 1e-12
    # discrete contraction factor approximates e^{-theta (T - t_k)}
    cont = 2.0 * delta * math.exp(-theta * (grid.horizon - grid.times[k]))
    assert abs(gap - cont) / cont <= 2.5 * grid.dt


# ---------------------------------------------------------------------------
# models


def test_builtin_drift_gradients_validate():
    rng = np.random.default_rng(0)
    assert cm.validate_drift_gradient(cm.ou_model(1.0), 1.0, rng) < 1e-5
    assert cm.validate_drift_gradient(cm.mean_reverting_model(2.0, 0.5), 0.7, rng) < 1e-5


def test_validator_flags_wrong_gradient():
    model = make_custom(
        drift=lambda x, t, th: -th * x,
        drift_dtheta=lambda x, t, th: +x,  # wrong sign
        drift_dx=lambda x, t, th: np.full((1, 1), -th),
    )
    assert cm.validate_drift_gradient(model, 1.0, np.random.default_rng(1)) > 1e-2


def test_mean_reverting_pulls_to_mean():
    # discrete chain mean: mean + (x0 - mean) (1 - theta dt)^M, exact
    grid = cm.TimeGrid(2.0, 100)
    mean, theta, x0 = 1.5, 1.2, 0.0
    batch = cm.simulate_paths(cm.mean_reverting_model(mean, 0.3), theta, x0, grid, 50_000, 31)
    emp = cm.fsum(batch.states[:, -1, 0]) / batch.n_paths
    exact = mean + (x0 - mean) * (1.0 - theta * grid.dt) ** grid.steps
    se = batch.states[:, -1, 0].std(ddof=1) / math.sqrt(batch.n_paths)
    assert abs(emp - exact) <= 3.0 * se


def test_ou_closed_form_helpers():
    assert abs(cm.ou_terminal_variance(1.0, 1.0, 1.0) - OU_VAR_T1) < 1e-15
    assert abs(cm.ou_conditional_second_moment(1.0, 1.0, 0.5, 1.0)
               - 0.3160602794142788) < 1e-15
    assert cm.ou_terminal_variance(0.0, 1.0, 0.7) == 0.7
    with pytest.raises(ValueError):
        cm.ou_conditional_second_moment(1.0, 1.0, 2.0, 1.0)
