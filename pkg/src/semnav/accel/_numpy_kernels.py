"""Pure-numpy fallback kernels.

Same signatures and numerics as _numba_kernels.py, selected by setting
SEMNAV_NO_NUMBA=1 before import. Keep the two modules in lockstep.
"""

import math

import numpy as np

IMPL_NAME = "numpy"


def unicycle_rollout(x0, us, dt):
    n = us.shape[0]
    xs = np.empty((n + 1, 4))
    xs[0] = x0
    for k in range(n):
        th = xs[k, 3]
        xs[k + 1, 0] = xs[k, 0] + dt * us[k, 0] * math.cos(th)
        xs[k + 1, 1] = xs[k, 1] + dt * us[k, 0] * math.sin(th)
        xs[k + 1, 2] = xs[k, 2]
        xs[k + 1, 3] = th + dt * us[k, 1]
    return xs


def _wrap(e):
    return (e + np.pi) % (2.0 * np.pi) - np.pi


def nmpc_value_grad(x0, us, dt, refs, q, r, obs, d_safe2, lam, mu, rho):
    n = us.shape[0]
    n_obs = obs.shape[0]
    xs = unicycle_rollout(x0, us, dt)

    err = xs[:n] - refs
    err[:, 3] = _wrap(err[:, 3])
    cost = float(np.sum(err * err @ q) + np.sum(us * us @ r))

    al = cost
    cons = np.empty((n_obs, n))
    psi_p = np.zeros((n_obs, n))
    if n_obs:
        diff = xs[None, :, :2] - obs  # (n_obs, N+1, 2)
        hval = np.sum(diff * diff, axis=2) - d_safe2[:, None]  # (n_obs, N+1)
        cons = hval[:, 1:] - (1.0 - lam[None, :]) * hval[:, :-1]
        m = mu - rho * cons
        active = m > 0.0
        al += float(
            np.sum(np.where(active, m * m, 0.0) - mu * mu) / (2.0 * rho)
        )
        psi_p = np.where(active, -m, 0.0)

    grad = np.empty((n, 2))
    a = np.zeros(4)
    if n_obs:
        a[0] = np.sum(psi_p[:, n - 1] * 2.0 * (xs[n, 0] - obs[:, n, 0]))
        a[1] = np.sum(psi_p[:, n - 1] * 2.0 * (xs[n, 1] - obs[:, n, 1]))

    for k in range(n - 1, -1, -1):
        th = xs[k, 3]
        v = us[k, 0]
        grad[k, 0] = 2.0 * r[0] * us[k, 0] + dt * math.cos(th) * a[0] + dt * math.sin(th) * a[1]
        grad[k, 1] = 2.0 * r[1] * us[k, 1] + dt * a[3]
        if k == 0:
            break
        b = np.array([a[0], a[1], a[2], -dt * v * math.sin(th) * a[0] + dt * v * math.cos(th) * a[1] + a[3]])
        b += 2.0 * q * err[k]
        if n_obs:
            c = -(1.0 - lam[k]) * psi_p[:, k] + psi_p[:, k - 1]
            b[0] += np.sum(c * 2.0 * (xs[k, 0] - obs[:, k, 0]))
            b[1] += np.sum(c * 2.0 * (xs[k, 1] - obs[:, k, 1]))
        a = b

    return al, cost, grad, cons


def points_free(blocked, ox, oy, res, pts, disc):
    h, w = blocked.shape
    cells = np.floor((pts - np.array([ox, oy])) / res).astype(np.int64)
    idx = cells[:, None, :] + disc[None, :, :]  # (M, D, 2) as (i, j)
    ii = idx[:, :, 0]
    jj = idx[:, :, 1]
    inside = (ii >= 0) & (jj >= 0) & (ii < w) & (jj < h)
    hit = np.where(inside, blocked[jj.clip(0, h - 1), ii.clip(0, w - 1)] != 0, True)
    return ~np.any(hit, axis=1)


def segment_free(blocked, ox, oy, res, ax, ay, bx, by, step, disc):
    dx = bx - ax
    dy = by - ay
    dist = math.sqrt(dx * dx + dy * dy)
    n = int(dist / step) + 2
    ts = np.linspace(0.0, 1.0, n)
    pts = np.empty((n, 2))
    pts[:, 0] = ax + ts * dx
    pts[:, 1] = ay + ts * dy
    return bool(np.all(points_free(blocked, ox, oy, res, pts, disc)))


def dist2_array(xs, ys, n, px, py):
    dx = xs[:n] - px
    dy = ys[:n] - py
    return dx * dx + dy * dy


def bspline_eval(ctrl, knots, degree, ts):
    n = ctrl.shape[0]
    ts = np.asarray(ts, dtype=np.float64)
    n_knots = knots.shape[0]
    tmax = knots[-1]

    basis = np.zeros((ts.shape[0], n_knots - 1))
    for i in range(n_knots - 1):
        basis[:, i] = (ts >= knots[i]) & (ts < knots[i + 1])
    at_end = ts >= tmax
    if np.any(at_end):
        basis[at_end] = 0.0
        basis[at_end, n - 1] = 1.0

    for p in range(1, degree + 1):
        nxt = np.zeros((ts.shape[0], n_knots - 1 - p))
        for i in range(n_knots - 1 - p):
            d1 = knots[i + p] - knots[i]
            d2 = knots[i + p + 1] - knots[i + 1]
            acc = np.zeros(ts.shape[0])
            if d1 > 0.0:
                acc += (ts - knots[i]) / d1 * basis[:, i]
            if d2 > 0.0:
                acc += (knots[i + p + 1] - ts) / d2 * basis[:, i + 1]
            nxt[:, i] = acc
        basis = nxt

    return basis @ ctrl
