"""Moreau envelope value/gradient via an inner strongly convex prox solve,
plus inexact-prox stationarity certificates."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .environment import Environment
from .errors import MaxInnerItersExceeded
from .objective import ConstantsBundle, ExactEvaluator, Hyperparams, check_lambda_env
from .oracle import TrueOracle, UncertaintyConfig
from .policy import PolicyParams, project_ball

DEFAULT_MAX_INNER_ITERS = 100_000

_BOUNDARY_TOL = 1e-12
_ARMIJO_SIGMA = 1e-4
_MIN_STEP = 1e-18
# absolute slack in the Armijo test so steps whose decrease is below the
# floating-point resolution of the objective are still accepted
_F_TOL = 1e-14


@dataclass(frozen=True)
class ProxResult:
    """Outcome of one prox subproblem solve.

    env_grad = (anchor - prox_point) / lambda_env by construction; residual is
    the achieved distance from 0 to the subdifferential of the (smoothed)
    inner objective at prox_point, accounting for the ball's normal cone.
    """

    prox_point: np.ndarray
    env_value: float
    env_grad: np.ndarray
    residual: float
    inner_iters: int


def ball_subdiff_residual(grad, point, center, radius):
    """dist(0, grad + normal cone of the ball at point)."""
    diff = point - center
    norm = np.linalg.norm(diff)
    gnorm = float(np.linalg.norm(grad))
    if norm < radius - _BOUNDARY_TOL * max(1.0, radius):
        return gnorm
    n = diff / norm
    inner = float(grad @ n)
    if inner >= 0:
        return gnorm
    return float(np.sqrt(max(gnorm**2 - inner**2, 0.0)))


def prox_point_generic(value_grad, center, radius, lam_env, anchor, eps_prox,
                       x0=None, max_iters=DEFAULT_MAX_INNER_ITERS):
    """Minimize f(u) + ||u - anchor||^2 / (2 lam_env) over a Euclidean ball.

    value_grad(u) must return (f(u), grad f(u)) for the smooth part f.
    Deterministic projected gradient with a Barzilai-Borwein step and Armijo
    backtracking; stops when the subdifferential residual of the full inner
    objective drops to eps_prox.
    """
    anchor = np.asarray(anchor, dtype=float)
    u = anchor.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    u = project_ball(u, center, radius)

    def psi(x):
        val, grad = value_grad(x)
        diff = x - anchor
        return (val + 0.5 * float(diff @ diff) / lam_env, grad + diff / lam_env)

    fu, gu = psi(u)
    step = 0.5 * lam_env
    iters = 0
    residual = ball_subdiff_residual(gu, u, center, radius)
    # nonmonotone Armijo reference (max of recent values) keeps the
    # Barzilai-Borwein steps effective on stiff, nearly-kinked objectives
    recent = deque([fu], maxlen=10)
    while residual > eps_prox and iters < max_iters:
        accepted = False
        f_ref = max(recent)
        while step >= _MIN_STEP:
            v = project_ball(u - step * gu, center, radius)
            move = v - u
            move_sq = float(move @ move)
            if move_sq == 0.0:
                break
            fv, gv = psi(v)
            if fv <= f_ref - _ARMIJO_SIGMA / step * move_sq + _F_TOL * (1.0 + abs(f_ref)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no further decrease possible at this resolution
            break
        ydiff = gv - gu
        sy = float(move @ ydiff)
        step = move_sq / sy if sy > 0 else step * 2.0
        step = min(max(step, _MIN_STEP), 1e6 * lam_env)
        u, fu, gu = v, fv, gv
        recent.append(fu)
        residual = ball_subdiff_residual(gu, u, center, radius)
        iters += 1
    env_value = fu
    env_grad = (anchor - u) / lam_env
    result = ProxResult(prox_point=u, env_value=env_value, env_grad=env_grad,
                        residual=residual, inner_iters=iters)
    if residual > eps_prox:
        err = MaxInnerItersExceeded(
            f"prox inner loop stopped at residual {residual} > {eps_prox}",
            residual=residual, point=u)
        err.result = result
        raise err
    return result


def prox_solve(env: Environment, oracle: TrueOracle, cfg: UncertaintyConfig,
               hyper: Hyperparams, bundle: ConstantsBundle, params: PolicyParams,
               anchor, eps_prox, warm_start=None,
               max_iters=DEFAULT_MAX_INNER_ITERS,
               evaluator: ExactEvaluator = None) -> ProxResult:
    """Prox of the smoothed robust objective plus the feasible-ball indicator.

    The nonsmooth penalty is replaced by its eps-smoothed version so the inner
    objective is differentiable; the induced envelope-value bias is at most
    lam * eps_smooth. The subproblem is strongly convex with modulus
    1/lambda_env - kappa.
    """
    cfg.check_admissible(oracle)
    check_lambda_env(bundle.lambda_env, bundle.kappa)
    hyper = hyper.replace(rho=cfg.rho)
    if evaluator is None:
        evaluator = ExactEvaluator(env, oracle, hyper, params.theta_ref)
    return prox_point_generic(
        evaluator.smoothed_value_grad,
        center=params.theta_ref,
        radius=params.radius_d,
        lam_env=bundle.lambda_env,
        anchor=anchor,
        eps_prox=eps_prox,
        x0=warm_start,
        max_iters=max_iters,
    )


def envelope_value_grad(env, oracle, cfg, hyper, bundle, params, theta,
                        eps_prox=1e-8, evaluator=None, warm_start=None):
    """(F_lamenv(theta), grad F_lamenv(theta)) via one prox solve."""
    res = prox_solve(env, oracle, cfg, hyper, bundle, params, theta, eps_prox,
                     warm_start=warm_start, evaluator=evaluator)
    return res.env_value, res.env_grad


def envelope_grad_along_trace(env, oracle, cfg, hyper, bundle, params, trace,
                              eps_prox=1e-5):
    """Fill env_grad_norms for every iterate of a run trace.

    Prox solves are warm-started along the trajectory. Returns the updated
    trace and a summary comparing the trajectory mean of squared norms to the
    convergence-rate bounds.
    """
    from .optimizer import corollary_bound, rate_bound

    hyper = hyper.replace(rho=cfg.rho)
    evaluator = ExactEvaluator(env, oracle, hyper, params.theta_ref)
    n = trace.thetas.shape[0]
    norms = np.empty(n)
    residuals = np.empty(n)
    inner_iters = np.empty(n, dtype=int)
    warm = None
    f_env_theta0 = None
    for t in range(n):
        res = prox_solve(env, oracle, cfg, hyper, bundle, params,
                         trace.thetas[t], eps_prox, warm_start=warm,
                         evaluator=evaluator)
        norms[t] = np.linalg.norm(res.env_grad)
        residuals[t] = res.residual
        inner_iters[t] = res.inner_iters
        warm = res.prox_point
        if t == 0:
            f_env_theta0 = res.env_value
    trace.env_grad_norms = norms
    horizon = n - 1
    mean_sq = float(np.mean(norms[:horizon] ** 2))
    summary = {
        "trajectory_mean_sq_env_grad": mean_sq,
        "f_env_theta0": f_env_theta0,
        "corollary_bound": corollary_bound(bundle, horizon, f_env_theta0),
        "smoothing_bias_bound": hyper.lam * hyper.eps_smooth,
        "eps_prox": eps_prox,
        "max_residual": float(residuals.max()),
        "total_inner_iters": int(inner_iters.sum()),
    }
    if hyper.eta is not None:
        summary["rate_bound"] = rate_bound(bundle, hyper.eta, horizon, f_env_theta0)
    return trace, summary


@dataclass(frozen=True)
class CertificateReport:
    """Near-stationarity certificate from an inexact prox solve."""

    env_grad_norm: float
    eps_prox: float
    residual: float
    point_gap_bound: float  # ||inexact prox point - exact prox point|| bound
    certified_dist_bound: float  # dist(0, subdiff F) at the inexact prox point


def stationarity_certificate(env, oracle, cfg, hyper, bundle, params, theta,
                             prox: ProxResult, eps_prox) -> CertificateReport:
    """Convert a prox residual into a near-stationarity bound for the objective.

    The achieved residual bounds the distance to the exact prox point through
    the strong convexity modulus 1/lambda_env - kappa, and the certified
    distance-to-subdifferential bound is
    ||env_grad|| + eps_prox + point_gap / lambda_env.
    """
    lam_env = bundle.lambda_env
    modulus = 1.0 / lam_env - bundle.kappa
    env_grad_norm = float(np.linalg.norm(prox.env_grad))
    point_gap = prox.residual / modulus
    certified = env_grad_norm + eps_prox + point_gap / lam_env
    return CertificateReport(
        env_grad_norm=env_grad_norm,
        eps_prox=eps_prox,
        residual=prox.residual,
        point_gap_bound=point_gap,
        certified_dist_bound=certified,
    )
