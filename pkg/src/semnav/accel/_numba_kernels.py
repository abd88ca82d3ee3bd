"""Numba-compiled hot kernels.

Loop-style implementations compiled with @njit. The pure-numpy twin of this
module lives in _numpy_kernels.py; both expose identical signatures and are
cross-checked in tests/test_accel.py.
"""

import math

import numpy as np
from numba import njit

IMPL_NAME = "numba"


@njit(cache=True)
def unicycle_rollout(x0, us, dt):
    # Heading is left unwrapped so the map stays smooth for differentiation.
    n = us.shape[0]
    xs = np.empty((n + 1, 4))
    for c in range(4):
        xs[0, c] = x0[c]
    for k in range(n):
        v = us[k, 0]
        w = us[k, 1]
        th = xs[k, 3]
        xs[k + 1, 0] = xs[k, 0] + dt * v * math.cos(th)
        xs[k + 1, 1] = xs[k, 1] + dt * v * math.sin(th)
        xs[k + 1, 2] = xs[k, 2]
        xs[k + 1, 3] = th + dt * w
    return xs


@njit(cache=True)
def nmpc_value_grad(x0, us, dt, refs, q, r, obs, d_safe2, lam, mu, rho):
    """Augmented-Lagrangian objective for the barrier-constrained tracker.

    us: (N,2) controls; refs: (N,4) stage references; q,r: diagonal weights;
    obs: (n_obs,N+1,2) predicted obstacle positions; d_safe2: (n_obs,) squared
    safety radii; lam: (N,) barrier decay; mu: (n_obs,N) multipliers.

    Returns (al_value, tracking_cost, grad (N,2), cons (n_obs,N)) where
    cons[i,k] = h_i(x_{k+1}) - (1-lam_k) h_i(x_k) is the barrier margin that
    must stay >= 0. Gradient is exact (reverse sweep through the rollout).
    """
    n = us.shape[0]
    n_obs = obs.shape[0]
    xs = unicycle_rollout(x0, us, dt)
    two_pi = 2.0 * math.pi

    cost = 0.0
    for k in range(n):
        e0 = xs[k, 0] - refs[k, 0]
        e1 = xs[k, 1] - refs[k, 1]
        e2 = xs[k, 2] - refs[k, 2]
        e3 = xs[k, 3] - refs[k, 3]
        e3 = (e3 + math.pi) % two_pi - math.pi
        cost += q[0] * e0 * e0 + q[1] * e1 * e1 + q[2] * e2 * e2 + q[3] * e3 * e3
        cost += r[0] * us[k, 0] * us[k, 0] + r[1] * us[k, 1] * us[k, 1]

    al = cost
    cons = np.empty((n_obs, n))
    psi_p = np.zeros((n_obs, n))
    for i in range(n_obs):
        for k in range(n):
            dx0 = xs[k, 0] - obs[i, k, 0]
            dy0 = xs[k, 1] - obs[i, k, 1]
            h0 = dx0 * dx0 + dy0 * dy0 - d_safe2[i]
            dx1 = xs[k + 1, 0] - obs[i, k + 1, 0]
            dy1 = xs[k + 1, 1] - obs[i, k + 1, 1]
            h1 = dx1 * dx1 + dy1 * dy1 - d_safe2[i]
            g = h1 - (1.0 - lam[k]) * h0
            cons[i, k] = g
            m = mu[i, k] - rho * g
            if m > 0.0:
                al += (m * m - mu[i, k] * mu[i, k]) / (2.0 * rho)
                psi_p[i, k] = -m
            else:
                al += -(mu[i, k] * mu[i, k]) / (2.0 * rho)

    grad = np.empty((n, 2))
    # Adjoint of the terminal state: only the last barrier row touches x_N.
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    a3 = 0.0
    for i in range(n_obs):
        s = psi_p[i, n - 1]
        if s != 0.0:
            a0 += s * 2.0 * (xs[n, 0] - obs[i, n, 0])
            a1 += s * 2.0 * (xs[n, 1] - obs[i, n, 1])

    for k in range(n - 1, -1, -1):
        th = xs[k, 3]
        v = us[k, 0]
        grad[k, 0] = 2.0 * r[0] * us[k, 0] + dt * math.cos(th) * a0 + dt * math.sin(th) * a1
        grad[k, 1] = 2.0 * r[1] * us[k, 1] + dt * a3
        if k == 0:
            break
        # Pull the adjoint back through f, then add terms that hit x_k directly.
        b0 = a0
        b1 = a1
        b2 = a2
        b3 = -dt * v * math.sin(th) * a0 + dt * v * math.cos(th) * a1 + a3
        e0 = xs[k, 0] - refs[k, 0]
        e1 = xs[k, 1] - refs[k, 1]
        e2 = xs[k, 2] - refs[k, 2]
        e3 = xs[k, 3] - refs[k, 3]
        e3 = (e3 + math.pi) % two_pi - math.pi
        b0 += 2.0 * q[0] * e0
        b1 += 2.0 * q[1] * e1
        b2 += 2.0 * q[2] * e2
        b3 += 2.0 * q[3] * e3
        for i in range(n_obs):
            s_k = psi_p[i, k]
            if s_k != 0.0:
                c = -(1.0 - lam[k]) * s_k
                b0 += c * 2.0 * (xs[k, 0] - obs[i, k, 0])
                b1 += c * 2.0 * (xs[k, 1] - obs[i, k, 1])
            s_p = psi_p[i, k - 1]
            if s_p != 0.0:
                b0 += s_p * 2.0 * (xs[k, 0] - obs[i, k, 0])
                b1 += s_p * 2.0 * (xs[k, 1] - obs[i, k, 1])
        a0 = b0
        a1 = b1
        a2 = b2
        a3 = b3

    return al, cost, grad, cons


@njit(cache=True)
def points_free(blocked, ox, oy, res, pts, disc):
    # blocked[row=j, col=i]; disc holds integer cell offsets of the robot disc.
    h = blocked.shape[0]
    w = blocked.shape[1]
    n = pts.shape[0]
    out = np.empty(n, np.bool_)
    for m in range(n):
        ci = int(math.floor((pts[m, 0] - ox) / res))
        cj = int(math.floor((pts[m, 1] - oy) / res))
        ok = True
        for d in range(disc.shape[0]):
            i = ci + disc[d, 0]
            j = cj + disc[d, 1]
            if i < 0 or j < 0 or i >= w or j >= h:
                ok = False
                break
            if blocked[j, i] != 0:
                ok = False
                break
        out[m] = ok
    return out


@njit(cache=True)
def segment_free(blocked, ox, oy, res, ax, ay, bx, by, step, disc):
    h = blocked.shape[0]
    w = blocked.shape[1]
    dx = bx - ax
    dy = by - ay
    dist = math.sqrt(dx * dx + dy * dy)
    n = int(dist / step) + 2
    for m in range(n):
        t = m / (n - 1)
        px = ax + t * dx
        py = ay + t * dy
        ci = int(math.floor((px - ox) / res))
        cj = int(math.floor((py - oy) / res))
        for d in range(disc.shape[0]):
            i = ci + disc[d, 0]
            j = cj + disc[d, 1]
            if i < 0 or j < 0 or i >= w or j >= h:
                return False
            if blocked[j, i] != 0:
                return False
    return True


@njit(cache=True)
def dist2_array(xs, ys, n, px, py):
    out = np.empty(n)
    for i in range(n):
        dx = xs[i] - px
        dy = ys[i] - py
        out[i] = dx * dx + dy * dy
    return out


@njit(cache=True)
def bspline_eval(ctrl, knots, degree, ts):
    # De Boor on a clamped knot vector; spans are found by linear walk
    # (sample counts are small enough that binary search buys nothing).
    n = ctrl.shape[0]
    dim = ctrl.shape[1]
    p = degree
    out = np.empty((ts.shape[0], dim))
    d = np.empty((p + 1, dim))
    for m in range(ts.shape[0]):
        t = ts[m]
        k = p
        while k < n - 1 and t >= knots[k + 1]:
            k += 1
        for j in range(p + 1):
            for c in range(dim):
                d[j, c] = ctrl[k - p + j, c]
        for rr in range(1, p + 1):
            for j in range(p, rr - 1, -1):
                i = k - p + j
                denom = knots[i + p - rr + 1] - knots[i]
                if denom == 0.0:
                    alpha = 0.0
                else:
                    alpha = (t - knots[i]) / denom
                for c in range(dim):
                    d[j, c] = (1.0 - alpha) * d[j - 1, c] + alpha * d[j, c]
        for c in range(dim):
            out[m, c] = d[p, c]
    return out
