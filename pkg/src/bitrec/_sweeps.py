"""Compiled coordinate-update kernels shared by meanfield and amp.

Both algorithms update one posterior activation at a time:

    logit_j = prior_logit_j - 0.5 * sum_l beta_l * (||phi_j||^2 - 2 phi_j' y~j)
    xhat_j  = sigmoid(logit_j)

with y~j the data minus the contribution of every other coordinate.  The only
difference is the prior logit: the mean-field pass refreshes it from the
Beta posterior digammas at the current xhat_j (mode 0), the message-passing
pass uses a fixed vector (mode 1).  The residual y - Phi xhat is maintained
incrementally so a full pass costs O(N M L).

digamma is reimplemented here (recurrence + asymptotic series) because
scipy.special cannot be called from nopython code; tests pin it against
scipy to 1e-13.
"""

import numpy as np
from numba import njit

MODE_BETA_PRIOR = 0
MODE_FIXED_LOGIT = 1


@njit(cache=True)
def digamma(x):
    # shift into the asymptotic regime, then the standard Bernoulli series
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (
        1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (
            1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0)))))))
    return acc + np.log(x) - 0.5 * inv - tail


@njit(cache=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return e / (1.0 + e)


@njit(cache=True)
def sweep(phis_t, col_sq, betas, xhat, resid, order, mode, a, b, eta):
    """Run coordinate updates over `order`, in place.

    phis_t : (L, N, M) transposed sensing matrices (row j = column phi_j)
    col_sq : (L, N) squared column norms
    betas  : (L,) current noise precisions
    xhat   : (N,) activations, updated in place
    resid  : (L, M) y - Phi xhat, updated in place
    order  : coordinate visit order (any subset, any order)
    mode   : MODE_BETA_PRIOR or MODE_FIXED_LOGIT
    a, b   : Beta prior parameters (mode 0)
    eta    : (N,) fixed prior logits (mode 1)

    Returns the max |change| over the visited coordinates, or -1.0 if a
    logit came out non-finite.
    """
    nl = phis_t.shape[0]
    m = phis_t.shape[2]
    max_delta = 0.0
    for idx in range(order.shape[0]):
        j = order[idx]
        if mode == MODE_BETA_PRIOR:
            prior_logit = digamma(xhat[j] + a) - digamma((1.0 - xhat[j]) + b)
        else:
            prior_logit = eta[j]
        quad = 0.0
        for l in range(nl):
            dot = 0.0
            for i in range(m):
                dot += phis_t[l, j, i] * resid[l, i]
            # phi_j' y~j = phi_j' resid + ||phi_j||^2 xhat_j
            quad += betas[l] * (col_sq[l, j]
                                - 2.0 * (dot + col_sq[l, j] * xhat[j]))
        logit = prior_logit - 0.5 * quad
        if not np.isfinite(logit):
            return -1.0
        x_new = _sigmoid(logit)
        dxj = x_new - xhat[j]
        if dxj != 0.0:
            for l in range(nl):
                for i in range(m):
                    resid[l, i] -= phis_t[l, j, i] * dxj
            xhat[j] = x_new
        ad = abs(dxj)
        if ad > max_delta:
            max_delta = ad
    return max_delta
