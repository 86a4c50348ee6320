"""Compiled inner loops for gradient-flow integration.

Parameters live in one flat vector (layers concatenated, row-major). The
kernels mirror ``gradients.loss_and_grad``; tests hold them to it.

RK4 freezes the hidden activation pattern over each step: the later stages
reuse the mask computed at the step's start. Every fixed-mask network is
still positively homogeneous, so each step integrates a vector field that
conserves the layer-balance quantities exactly, and RK4 keeps their drift at
fourth order even when the trajectory crosses or slides along a ReLU kink.
Re-evaluating the mask per stage mixes two vector fields and drops the drift
to first order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

KIND_SQUARE, KIND_EXP, KIND_LOGISTIC = 0, 1, 2
EULER, RK4 = 0, 1
STATUS_BUDGET, STATUS_CONVERGED, STATUS_STATIONARY, STATUS_DIVERGED = 0, 1, 2, 3


@njit(cache=True)
def loss_grad(theta, dims, offs, t, lab, kind, l2, grad, hbuf, abuf, mask, frozen, hoffs, aoffs, dbuf, half):
    """Data loss at ``theta``; writes the objective gradient (incl. ``l2 * ||theta||^2``) into ``grad``.

    ``abuf`` starts with the inputs (``aoffs[0] == 0``) followed by the hidden
    post-activations. With ``frozen`` the hidden units are gated by ``mask``
    instead of by the sign of their pre-activation; otherwise ``mask``
    receives the pattern. ``dbuf`` holds two back-propagation slots of
    length ``half``.
    """
    n = t.shape[1]
    k = dims.shape[0] - 1
    for l in range(k):
        rows, cols, w0, ai, ho = dims[l + 1], dims[l], offs[l], aoffs[l], hoffs[l]
        for i in range(rows):
            wi = w0 + i * cols
            for j in range(n):
                s = 0.0
                for c in range(cols):
                    s += theta[wi + c] * abuf[ai + c * n + j]
                idx = ho + i * n + j
                hbuf[idx] = s
                if l < k - 1:
                    if not frozen:
                        mask[idx] = 1.0 if s > 0.0 else 0.0
                    abuf[aoffs[l + 1] + i * n + j] = s * mask[idx]

    dout = dims[k]
    ho = hoffs[k - 1]
    total = 0.0
    for i in range(dout):
        for j in range(n):
            o = hbuf[ho + i * n + j]
            if kind == KIND_SQUARE:
                r = o - t[i, j]
                total += 0.5 * r * r
                dbuf[i * n + j] = r
            else:
                q = lab[j] * o
                if kind == KIND_EXP:
                    e = np.exp(-q)
                    total += e
                    dbuf[i * n + j] = -lab[j] * e
                else:
                    total += np.logaddexp(0.0, -q)
                    dbuf[i * n + j] = -lab[j] * np.exp(-np.logaddexp(0.0, q))

    cur, nxt = 0, half
    for l in range(k - 1, -1, -1):
        rows, cols, w0, ai = dims[l + 1], dims[l], offs[l], aoffs[l]
        for i in range(rows):
            for c in range(cols):
                s = 0.0
                for j in range(n):
                    s += dbuf[cur + i * n + j] * abuf[ai + c * n + j]
                g = w0 + i * cols + c
                grad[g] = s + 2.0 * l2 * theta[g]
        if l > 0:
            mo = hoffs[l - 1]
            for c in range(cols):
                for j in range(n):
                    if mask[mo + c * n + j] > 0.0:
                        s = 0.0
                        for i in range(rows):
                            s += theta[w0 + i * cols + c] * dbuf[cur + i * n + j]
                        dbuf[nxt + c * n + j] = s
                    else:
                        dbuf[nxt + c * n + j] = 0.0
            cur, nxt = nxt, cur
    return total


@njit(cache=True)
def integrate(theta, dims, offs, x, t, lab, kind, l2, h, n_steps, method,
              loss_tol, grad_tol, full_budget, div_limit):
    """Advance ``theta`` in place by up to ``n_steps`` steps.

    Returns ``(steps_done, status, loss, grad_norm)`` where loss and gradient
    norm are evaluated at the returned ``theta``. With ``full_budget`` the
    loss and gradient tolerances are ignored.
    """
    p = theta.size
    n = x.shape[1]
    k = dims.shape[0] - 1
    hoffs = np.zeros(k, dtype=np.int64)
    aoffs = np.zeros(k, dtype=np.int64)
    acc = 0
    maxw = 0
    for l in range(k):
        hoffs[l] = acc
        acc += dims[l + 1] * n
    for l in range(k + 1):
        if dims[l] > maxw:
            maxw = dims[l]
    asize = dims[0] * n
    for l in range(1, k):
        aoffs[l] = asize
        asize += dims[l] * n
    hbuf = np.empty(acc)
    mask = np.zeros(acc)
    abuf = np.empty(asize)
    for c in range(dims[0]):
        for j in range(n):
            abuf[c * n + j] = x[c, j]
    half = maxw * n
    dbuf = np.empty(2 * half)
    g1 = np.empty(p)
    g2 = np.empty(p)
    g3 = np.empty(p)
    g4 = np.empty(p)
    tmp = np.empty(p)

    steps = 0
    while True:
        cur = loss_grad(theta, dims, offs, t, lab, kind, l2, g1, hbuf, abuf, mask, False, hoffs, aoffs, dbuf, half)
        gn2 = 0.0
        tn2 = 0.0
        for i in range(p):
            gn2 += g1[i] * g1[i]
            tn2 += theta[i] * theta[i]
        gn = np.sqrt(gn2)
        if not (np.isfinite(cur) and np.isfinite(gn)) or cur > div_limit or np.sqrt(tn2) > div_limit:
            return steps, STATUS_DIVERGED, cur, gn
        if not full_budget and cur <= loss_tol:
            return steps, STATUS_CONVERGED, cur, gn
        # an exactly zero gradient is a fixed point of both schemes
        if gn == 0.0 or (not full_budget and gn <= grad_tol):
            return steps, STATUS_STATIONARY, cur, gn
        if steps >= n_steps:
            return steps, STATUS_BUDGET, cur, gn
        if method == EULER:
            for i in range(p):
                theta[i] -= h * g1[i]
        else:
            for i in range(p):
                tmp[i] = theta[i] - 0.5 * h * g1[i]
            loss_grad(tmp, dims, offs, t, lab, kind, l2, g2, hbuf, abuf, mask, True, hoffs, aoffs, dbuf, half)
            for i in range(p):
                tmp[i] = theta[i] - 0.5 * h * g2[i]
            loss_grad(tmp, dims, offs, t, lab, kind, l2, g3, hbuf, abuf, mask, True, hoffs, aoffs, dbuf, half)
            for i in range(p):
                tmp[i] = theta[i] - h * g3[i]
            loss_grad(tmp, dims, offs, t, lab, kind, l2, g4, hbuf, abuf, mask, True, hoffs, aoffs, dbuf, half)
            for i in range(p):
                theta[i] -= h / 6.0 * (g1[i] + 2.0 * g2[i] + 2.0 * g3[i] + g4[i])
        steps += 1
