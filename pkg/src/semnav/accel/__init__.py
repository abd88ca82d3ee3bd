"""Hot-loop kernels with a compile-time backend switch.

Set SEMNAV_NO_NUMBA=1 to force the pure-numpy implementations; otherwise the
numba build is used when importable. warmup() triggers JIT compilation ahead
of any timed loop so first-call latency never lands inside a control cycle.
"""

import os

import numpy as np

_want_numpy = os.environ.get("SEMNAV_NO_NUMBA", "").strip() not in ("", "0")

if not _want_numpy:
    try:
        from semnav.accel import _numba_kernels as _impl
    except ImportError:
        from semnav.accel import _numpy_kernels as _impl
else:
    from semnav.accel import _numpy_kernels as _impl

IMPL_NAME = _impl.IMPL_NAME

unicycle_rollout = _impl.unicycle_rollout
nmpc_value_grad = _impl.nmpc_value_grad
points_free = _impl.points_free
segment_free = _impl.segment_free
dist2_array = _impl.dist2_array
bspline_eval = _impl.bspline_eval

_warm = False


def warmup():
    """Run every kernel once on tiny inputs; compiles the numba build."""
    global _warm
    if _warm:
        return
    x0 = np.zeros(4)
    us = np.full((3, 2), 0.1)
    unicycle_rollout(x0, us, 0.1)
    refs = np.zeros((3, 4))
    q = np.ones(4)
    r = np.ones(2)
    obs = np.full((1, 4, 2), 5.0)
    nmpc_value_grad(x0, us, 0.1, refs, q, r, obs, np.array([1.0]), np.full(3, 0.2),
                    np.zeros((1, 3)), 10.0)
    blocked = np.zeros((4, 4), dtype=np.uint8)
    disc = np.zeros((1, 2), dtype=np.int64)
    points_free(blocked, 0.0, 0.0, 0.5, np.array([[1.0, 1.0]]), disc)
    segment_free(blocked, 0.0, 0.0, 0.5, 0.2, 0.2, 1.0, 1.0, 0.25, disc)
    dist2_array(np.zeros(4), np.zeros(4), 2, 1.0, 1.0)
    ctrl = np.array([[0.0, 0.0], [1.0, 0.5], [2.0, 0.0]])
    knots = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    bspline_eval(ctrl, knots, 2, np.array([0.0, 0.5, 1.0]))
    _warm = True
