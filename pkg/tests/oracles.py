"""Independent reference computations used by the test-suite.

Nothing here imports the autodiff engine's backward pass; these are the
brute-force paths the engine is checked against.
"""
import math

import numpy as np

FD_REL_TOL = 1e-4
FD_ABS_FLOOR = 1e-6


def central_difference(f, arrays, h_scale=1e-3):
    """Central finite differences of scalar ``f()`` w.r.t. each array, in place.

    Step per element is ``h_scale * max(1, |theta|)``.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = float(arr[idx])
            h = h_scale * max(1.0, abs(orig))
            arr[idx] = orig + h
            up = float(f())
            arr[idx] = orig - h
            down = float(f())
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def grad_mismatch(analytic, numeric, rel_tol=FD_REL_TOL, abs_floor=FD_ABS_FLOOR):
    """Elements failing both the absolute floor and the relative tolerance."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    rel = diff / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-300)
    return np.argwhere((diff > abs_floor) & (rel >= rel_tol))


def naive_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i][t]) * float(b[t][j])
            out[i][j] = s
    return out


def entropy_nats(p):
    return -sum(x * math.log(x) for x in p if x > 0)


def softmax_list(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def scalar_adam(w, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    traj = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        w = w - lr * m_hat / (math.sqrt(v_hat) + eps)
        traj.append(w)
    return traj
