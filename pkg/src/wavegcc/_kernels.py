"""Compiled inner loop for RK4 on the conformally perturbed torus."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _rhs(y, W, a, ph, out):
    # u = sum a cos(W.x + ph); lambda = exp(-u) |xi|
    u = 0.0
    g0 = 0.0
    g1 = 0.0
    for j in range(a.shape[0]):
        arg = W[j, 0] * y[0] + W[j, 1] * y[1] + ph[j]
        u += a[j] * math.cos(arg)
        s = a[j] * math.sin(arg)
        g0 += s * W[j, 0]
        g1 += s * W[j, 1]
    e = math.exp(-u)
    nrm = math.hypot(y[2], y[3])
    out[0] = e * y[2] / nrm
    out[1] = e * y[3] / nrm
    # xi' = -d_x lambda = exp(-u) |xi| grad u, grad u = -(g0, g1)
    out[2] = -e * nrm * g0
    out[3] = -e * nrm * g1


@njit(cache=True)
def rk4(Y, h, nsteps, W, a, ph):
    """``nsteps`` RK4 steps of size h[i] for every row of Y = (x1, x2, xi1, xi2)."""
    out = Y.copy()
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    for i in range(Y.shape[0]):
        y = out[i]
        hi = h[i]
        for _ in range(nsteps):
            _rhs(y, W, a, ph, k1)
            for c in range(4):
                tmp[c] = y[c] + 0.5 * hi * k1[c]
            _rhs(tmp, W, a, ph, k2)
            for c in range(4):
                tmp[c] = y[c] + 0.5 * hi * k2[c]
            _rhs(tmp, W, a, ph, k3)
            for c in range(4):
                tmp[c] = y[c] + hi * k3[c]
            _rhs(tmp, W, a, ph, k4)
            for c in range(4):
                y[c] += hi / 6.0 * (k1[c] + 2.0 * (k2[c] + k3[c]) + k4[c])
    return out
