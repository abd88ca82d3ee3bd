"""Backend agreement and numerics for the hot-loop kernels.

The numba and numpy builds must be interchangeable: every kernel is run on
the same inputs through both modules and compared tightly. The objective
gradient is additionally checked against central differences.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from semnav import accel
from semnav.accel import _numba_kernels as knb
from semnav.accel import _numpy_kernels as knp


def _nmpc_inputs(seed, n=20, n_obs=3):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(0, 2, 4)
    us = rng.uniform(-1, 1, (n, 2))
    refs = x0 + rng.normal(0, 1.5, (n, 4))
    q = np.array([1.0, 1.0, 0.0, 0.15])
    r = np.array([0.05, 0.05])
    obs = rng.normal(0, 4, (n_obs, n + 1, 2))
    d2 = rng.uniform(0.5, 2.5, n_obs)
    lam = np.full(n, 0.2)
    mu = np.abs(rng.normal(0, 1, (n_obs, n)))
    return x0, us, 0.1, refs, q, r, obs, d2, lam, mu, 5.0


def test_warmup_idempotent():
    accel.warmup()
    accel.warmup()


@pytest.mark.parametrize("seed", range(5))
def test_rollout_backends_agree(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(0, 3, 4)
    us = rng.uniform(-2, 2, (15, 2))
    a = knb.unicycle_rollout(x0, us, 0.1)
    b = knp.unicycle_rollout(x0, us, 0.1)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_rollout_straight_line():
    xs = knp.unicycle_rollout(np.zeros(4), np.tile([2.0, 0.0], (10, 1)), 0.1)
    np.testing.assert_allclose(xs[-1], [2.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_rollout_pure_spin():
    xs = knp.unicycle_rollout(np.zeros(4), np.tile([0.0, 1.0], (10, 1)), 0.1)
    np.testing.assert_allclose(xs[-1], [0.0, 0.0, 0.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("n_obs", [0, 1, 3])
def test_nmpc_value_grad_backends_agree(seed, n_obs):
    args = _nmpc_inputs(seed, n_obs=n_obs)
    al_a, cost_a, grad_a, cons_a = knb.nmpc_value_grad(*args)
    al_b, cost_b, grad_b, cons_b = knp.nmpc_value_grad(*args)
    assert al_a == pytest.approx(al_b, rel=1e-12, abs=1e-9)
    assert cost_a == pytest.approx(cost_b, rel=1e-12, abs=1e-9)
    np.testing.assert_allclose(grad_a, grad_b, rtol=1e-10, atol=1e-9)
    np.testing.assert_allclose(cons_a, cons_b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("impl", [knb, knp])
def test_nmpc_gradient_matches_central_differences(impl):
    x0, us, dt, refs, q, r, obs, d2, lam, mu, rho = _nmpc_inputs(3, n=12)
    grad = impl.nmpc_value_grad(x0, us, dt, refs, q, r, obs, d2, lam, mu, rho)[2]
    eps = 1e-5
    for i in range(us.shape[0]):
        for j in range(2):
            up = us.copy()
            up[i, j] += eps
            um = us.copy()
            um[i, j] -= eps
            fd = (
                impl.nmpc_value_grad(x0, up, dt, refs, q, r, obs, d2, lam, mu, rho)[0]
                - impl.nmpc_value_grad(x0, um, dt, refs, q, r, obs, d2, lam, mu, rho)[0]
            ) / (2 * eps)
            denom = max(abs(fd), abs(grad[i, j]), 1.0)
            assert abs(fd - grad[i, j]) / denom < 1e-4


def test_nmpc_penalty_inactive_when_margins_large():
    # Obstacles far away: AL value must equal the bare tracking cost minus
    # the constant -mu^2/(2 rho) bookkeeping term for inactive constraints.
    x0 = np.zeros(4)
    us = np.tile([1.0, 0.0], (5, 1))
    refs = np.zeros((5, 4))
    q = np.ones(4)
    r = np.ones(2)
    obs = np.full((2, 6, 2), 100.0)
    d2 = np.ones(2)
    lam = np.full(5, 0.2)
    mu = np.zeros((2, 5))
    al, cost, grad, cons = knp.nmpc_value_grad(x0, us, 0.1, refs, q, r, obs, d2, lam, mu, 5.0)
    assert al == pytest.approx(cost)
    assert np.all(cons > 0)


def _grid_fixture(seed=0):
    rng = np.random.default_rng(seed)
    blocked = (rng.random((40, 60)) < 0.25).astype(np.uint8)
    disc = np.array(
        [[di, dj] for di in range(-2, 3) for dj in range(-2, 3) if di * di + dj * dj <= 4],
        dtype=np.int64,
    )
    return blocked, disc


@pytest.mark.parametrize("seed", range(4))
def test_points_free_backends_agree(seed):
    blocked, disc = _grid_fixture(seed)
    rng = np.random.default_rng(100 + seed)
    pts = rng.uniform(-2, 14, (300, 2))
    a = knb.points_free(blocked, 0.0, 0.0, 0.2, pts, disc)
    b = knp.points_free(blocked, 0.0, 0.0, 0.2, pts, disc)
    assert np.array_equal(a, b)


def test_points_free_rejects_out_of_bounds():
    blocked = np.zeros((10, 10), dtype=np.uint8)
    disc = np.zeros((1, 2), dtype=np.int64)
    pts = np.array([[-0.5, 0.5], [0.5, 0.5], [9.99, 9.99], [10.5, 5.0]])
    for impl in (knb, knp):
        out = impl.points_free(blocked, 0.0, 0.0, 1.0, pts, disc)
        assert list(out) == [False, True, True, False]


def test_points_free_inflation_blocks_nearby_cells():
    blocked = np.zeros((10, 10), dtype=np.uint8)
    blocked[5, 5] = 1
    fat = np.array([[di, dj] for di in (-1, 0, 1) for dj in (-1, 0, 1)], dtype=np.int64)
    thin = np.zeros((1, 2), dtype=np.int64)
    pt = np.array([[4.5, 4.5]])  # cell (4, 4), adjacent to the obstacle
    for impl in (knb, knp):
        assert impl.points_free(blocked, 0.0, 0.0, 1.0, pt, thin)[0]
        assert not impl.points_free(blocked, 0.0, 0.0, 1.0, pt, fat)[0]


@pytest.mark.parametrize("seed", range(4))
def test_segment_free_backends_agree(seed):
    blocked, disc = _grid_fixture(seed)
    rng = np.random.default_rng(200 + seed)
    for _ in range(60):
        ax, ay, bx, by = rng.uniform(0, 10, 4)
        a = knb.segment_free(blocked, 0.0, 0.0, 0.2, ax, ay, bx, by, 0.1, disc)
        b = knp.segment_free(blocked, 0.0, 0.0, 0.2, ax, ay, bx, by, 0.1, disc)
        assert a == b


def test_segment_free_wall():
    blocked = np.zeros((20, 20), dtype=np.uint8)
    blocked[:, 10] = 1  # vertical wall at x in [10, 11)
    disc = np.zeros((1, 2), dtype=np.int64)
    for impl in (knb, knp):
        assert not impl.segment_free(blocked, 0.0, 0.0, 1.0, 2.0, 5.0, 18.0, 5.0, 0.5, disc)
        assert impl.segment_free(blocked, 0.0, 0.0, 1.0, 2.0, 5.0, 9.0, 5.0, 0.5, disc)


def test_dist2_prefix_only():
    xs = np.array([0.0, 3.0, 100.0])
    ys = np.array([0.0, 4.0, 100.0])
    for impl in (knb, knp):
        out = impl.dist2_array(xs, ys, 2, 0.0, 0.0)
        assert out.shape == (2,)
        assert out[1] == pytest.approx(25.0)


def _clamped_knots(n, p):
    return np.concatenate([np.zeros(p), np.linspace(0.0, 1.0, n - p + 1), np.ones(p)])


@pytest.mark.parametrize("n,p", [(4, 3), (7, 3), (12, 3), (3, 2)])
def test_bspline_backends_agree(n, p):
    rng = np.random.default_rng(n * 10 + p)
    ctrl = rng.normal(0, 5, (n, 2))
    knots = _clamped_knots(n, p)
    ts = np.linspace(0, 1, 57)
    a = knb.bspline_eval(ctrl, knots, p, ts)
    b = knp.bspline_eval(ctrl, knots, p, ts)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_bspline_clamped_interpolates_endpoints():
    ctrl = np.array([[0.0, 0.0], [1.0, 3.0], [4.0, -1.0], [6.0, 2.0], [8.0, 0.0]])
    knots = _clamped_knots(5, 3)
    out = knp.bspline_eval(ctrl, knots, 3, np.array([0.0, 1.0]))
    np.testing.assert_allclose(out[0], ctrl[0], atol=1e-12)
    np.testing.assert_allclose(out[-1], ctrl[-1], atol=1e-12)


def test_bspline_straight_control_polygon_stays_straight():
    ctrl = np.column_stack([np.linspace(0, 9, 6), np.linspace(0, 3, 6)])
    knots = _clamped_knots(6, 3)
    out = knp.bspline_eval(ctrl, knots, 3, np.linspace(0, 1, 25))
    # Curve must lie on the line y = x/3.
    np.testing.assert_allclose(out[:, 1], out[:, 0] / 3.0, atol=1e-9)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, SEMNAV_NO_NUMBA="1")
    code = "from semnav import accel; print(accel.IMPL_NAME)"
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "numpy"


def test_default_backend_is_numba_when_available():
    env = {k: v for k, v in os.environ.items() if k != "SEMNAV_NO_NUMBA"}
    code = "from semnav import accel; print(accel.IMPL_NAME)"
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "numba"
