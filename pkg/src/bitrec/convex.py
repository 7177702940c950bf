"""Box-constrained l1 recovery with EM noise-precision updates.

solve_box_l1 handles the core program

    min 1'x   s.t.  ||A x - b||_2 <= eps,   0 <= x <= 1

(for x >= 0 the l1 norm is the plain sum) via three-block operator splitting:
x carries the smooth part, one copy lives in the box, one copy of A x lives in
the eps-ball around b.  Scaled duals, over-relaxation, and a cached
factorization of (I + A'A) -- through the Woodbury identity when the system is
underdetermined -- keep the per-iteration cost at two matvecs.

recover_convex_em wraps it in the alternating loop: stack the channels
whitened by the current precisions, solve, then refit each unknown precision
as beta = M / ||y - Phi x*||^2 (an EM step for the Gaussian noise model).
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateResidual, Infeasible
from .model import PriorConfig, make_result, validate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvexSolverConfig:
    admm_rho: float = 1.0
    max_inner_iters: int = 20000
    primal_tol: float = 1e-6
    dual_tol: float = 1e-6
    max_outer_iters: int = 50
    outer_tol: float = 1e-4
    epsilon_override: float | None = None
    over_relaxation: float = 1.8
    adapt_rho: bool = True
    beta_cap: float | None = 1e12
    # use beta0 * M / ||y||^2 per channel instead of a flat beta0
    scale_beta0: bool = False


@dataclass(frozen=True)
class SolveStatus:
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    kkt_residual: float
    objective: float


def _spectral_norm(a):
    """Power-iteration estimate of ||A||_2 with a fixed start vector."""
    v = np.full(a.shape[1], 1.0 / np.sqrt(a.shape[1]))
    s = 0.0
    for _ in range(20):
        w = a.T @ (a @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 1.0
        v = w / nw
        s_new = np.sqrt(nw)
        if abs(s_new - s) <= 1e-6 * s_new:
            s = s_new
            break
        s = s_new
    return max(s, 1e-30)


class _RidgeSolver:
    """Applies (I + A'A)^{-1} using a Cholesky factor cached at setup;
    switches to the Woodbury form when A has fewer rows than columns."""

    def __init__(self, a):
        from scipy.linalg import cho_factor, cho_solve

        self._cho_solve = cho_solve
        m, n = a.shape
        self.a = a
        self.woodbury = m < n
        if self.woodbury:
            g = a @ a.T
            g[np.diag_indices_from(g)] += 1.0
            self.factor = cho_factor(g, lower=True, check_finite=False)
        else:
            g = a.T @ a
            g[np.diag_indices_from(g)] += 1.0
            self.factor = cho_factor(g, lower=True, check_finite=False)

    def solve(self, rhs):
        if self.woodbury:
            t = self._cho_solve(self.factor, self.a @ rhs, check_finite=False)
            return rhs - self.a.T @ t
        return self._cho_solve(self.factor, rhs, check_finite=False)


def solve_box_l1(a, b, epsilon, config=None, warm=None):
    """Minimize 1'x subject to ||a x - b|| <= epsilon and 0 <= x <= 1.

    Returns (x, SolveStatus).  x satisfies the box exactly (it is the
    projected iterate); the ball holds to epsilon + primal_tol*(1+||b||).
    warm, if given, is an (x, z1, u1) triple from a related solve.
    Raises Infeasible when the ball constraint is certified unreachable
    (epsilon too small for any box point).
    """
    if config is None:
        config = ConvexSolverConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    mt, n = a.shape
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")

    # normalize so ||A|| ~ 1; the feasible set is invariant when b and
    # epsilon are scaled along with A
    scale = _spectral_norm(a)
    a = a / scale
    b = b / scale
    eps = epsilon / scale

    ridge = _RidgeSolver(a)
    rho = float(config.admm_rho)
    alpha = float(config.over_relaxation)

    if warm is not None:
        x, z1, u1 = (np.array(v, dtype=np.float64) for v in warm)
    else:
        x = np.zeros(n)
        z1 = np.zeros(n)
        u1 = np.zeros(n)
    ax = a @ x
    z2 = _ball_project(ax, b, eps)
    u2 = np.zeros(mt)

    sqrt_nm = np.sqrt(n + mt)
    sqrt_n = np.sqrt(n)
    best_ball = np.inf
    stall = 0
    converged = False
    it = 0
    for it in range(1, config.max_inner_iters + 1):
        rhs = (z1 - u1) + a.T @ (z2 - u2) - (1.0 / rho)
        x = ridge.solve(rhs)
        ax = a @ x

        xr = alpha * x + (1.0 - alpha) * z1
        axr = alpha * ax + (1.0 - alpha) * z2

        z1_old = z1
        z2_old = z2
        z1 = np.clip(xr + u1, 0.0, 1.0)
        z2 = _ball_project(axr + u2, b, eps)
        u1 = u1 + xr - z1
        u2 = u2 + axr - z2

        r_pri = np.sqrt(np.linalg.norm(x - z1) ** 2
                        + np.linalg.norm(ax - z2) ** 2)
        s_dual = rho * np.linalg.norm((z1 - z1_old) + a.T @ (z2 - z2_old))
        eps_pri = sqrt_nm * config.primal_tol + config.primal_tol * max(
            np.sqrt(np.linalg.norm(x) ** 2 + np.linalg.norm(ax) ** 2),
            np.sqrt(np.linalg.norm(z1) ** 2 + np.linalg.norm(z2) ** 2),
        )
        eps_dual = sqrt_n * config.dual_tol + config.dual_tol * rho * \
            np.linalg.norm(u1 + a.T @ u2)
        if r_pri <= eps_pri and s_dual <= eps_dual:
            converged = True
            break

        # infeasibility heuristic: the ball residual of the box-projected
        # iterate stops improving while staying far above tolerance.  An
        # eps=0 ball around a reachable b is always attainable, so give
        # the equality case far more patience before giving up.
        ball_res = np.linalg.norm(a @ z1 - b) - eps
        if ball_res < best_ball * (1.0 - 1e-8):
            best_ball = ball_res
            stall = 0
        else:
            stall += 1
        stall_limit = 500 if eps > 0.0 else 5000
        if stall > stall_limit and ball_res > 100.0 * eps_pri:
            raise Infeasible(
                f"ball residual stalled at {ball_res:.3e} (eps={eps:.3e})"
            )

        if config.adapt_rho and it % 50 == 0:
            if r_pri > 10.0 * s_dual:
                rho *= 2.0
                u1 *= 0.5
                u2 *= 0.5
            elif s_dual > 10.0 * r_pri:
                rho *= 0.5
                u1 *= 2.0
                u2 *= 2.0

    # the box copy is exactly feasible for the box; report it
    x_out = z1
    # stationarity of the x-minimization at convergence reduces to
    # 1 + rho*u1 + A'(rho*u2) = 0 (duals of the two copy constraints)
    kkt = np.linalg.norm(1.0 + rho * u1 + a.T @ (rho * u2), np.inf) \
        / (1.0 + rho * np.linalg.norm(np.concatenate([u1, u2]), np.inf))
    status = SolveStatus(
        converged=converged,
        iterations=it,
        primal_residual=float(np.linalg.norm(a @ x_out - b) - eps),
        dual_residual=float(np.linalg.norm(x - z1, np.inf)),
        kkt_residual=float(kkt),
        objective=float(x_out.sum()),
    )
    return x_out, status


def _ball_project(v, center, eps):
    if eps == 0.0:
        return center.copy()
    d = v - center
    nd = np.linalg.norm(d)
    if nd <= eps:
        return v.copy()
    return center + d * (eps / nd)


def recover_convex_em(ms, priors=None, config=None):
    """Algorithm: alternate the box-l1 solve on the whitened stacked system
    with per-channel precision refits beta = M / ||y - Phi x*||^2.

    Channels carrying a known beta keep it.  A zero residual hits the
    configured cap (or raises DegenerateResidual when beta_cap is None).
    """
    if priors is None:
        priors = PriorConfig()
    if config is None:
        config = ConvexSolverConfig()
    validate(ms)

    m, n, nl = ms.m, ms.n, ms.l_channels
    if config.epsilon_override is not None:
        eps = float(config.epsilon_override)
    else:
        eps = priors.epsilon_c * np.sqrt(m * nl)

    betas = []
    for ch in ms.channels:
        if ch.beta is not None:
            betas.append(float(ch.beta))
        elif config.scale_beta0:
            ynorm2 = float(ch.y @ ch.y)
            betas.append(priors.beta0 * m / ynorm2 if ynorm2 > 0 else priors.beta0)
        else:
            betas.append(priors.beta0)
    betas = np.array(betas)

    phis = [ch.phi for ch in ms.channels]
    ys = [ch.y for ch in ms.channels]

    x = np.zeros(n)
    warm = None
    trace = []
    inner_ok = True
    outer_done = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        w = np.sqrt(betas)
        a = np.vstack([w[l] * phis[l] for l in range(nl)])
        b = np.concatenate([w[l] * ys[l] for l in range(nl)])
        x_new, status = solve_box_l1(a, b, eps, config, warm=warm)
        inner_ok = status.converged
        warm = (x_new, x_new, np.zeros(n))
        trace.append(float(x_new.sum()))

        beta_shift = 0.0
        for l, ch in enumerate(ms.channels):
            if ch.beta is not None:
                continue
            r2 = float(np.linalg.norm(ys[l] - phis[l] @ x_new) ** 2)
            if r2 <= 0.0:
                if config.beta_cap is None:
                    raise DegenerateResidual(
                        f"channel {l}: zero residual and no beta cap"
                    )
                new_beta = config.beta_cap
            else:
                new_beta = m / r2
                if config.beta_cap is not None:
                    new_beta = min(new_beta, config.beta_cap)
            beta_shift = max(beta_shift,
                             abs(np.log(new_beta) - np.log(betas[l])))
            betas[l] = new_beta

        delta = np.max(np.abs(x_new - x))
        x = x_new
        # the EM loop estimates (x, beta) jointly; both must settle
        if delta < config.outer_tol and beta_shift < config.outer_tol:
            outer_done = True
            break
        if log.isEnabledFor(logging.DEBUG):
            log.debug("outer %d: obj=%.6f delta=%.2e inner_iters=%d",
                      it, trace[-1], delta, status.iterations)

    return make_result(
        x_hat=np.clip(x, 0.0, 1.0),
        beta_hat=betas,
        iterations=it,
        objective_trace=trace,
        converged=bool(outer_done and inner_ok),
        threshold=priors.threshold,
    )
