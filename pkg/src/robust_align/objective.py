"""Exact evaluation of the alignment loss, the robustness penalty, the robust
objective by both routes, exact gradients/subgradients, and the constants ledger.

Everything here enumerates the finite triple set, so "exact" means exact up to
floating point: no sampling is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .environment import (
    DEFAULT_ENUMERATION_CAP,
    ComparisonTriple,
    Environment,
    triple_index_arrays,
)
from .errors import InvalidEnvelopeParam
from .numdiff import fd_hessian_from_grad
from .oracle import TrueOracle, UncertaintyConfig, true_prob_table
from .policy import PolicyParams, pairwise_logit

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class Hyperparams:
    """Run hyperparameters. The composite weight lam is always rho * beta."""

    beta: float
    rho: float
    eps_smooth: float = 1e-8
    eta: Optional[float] = None  # None means "auto" (horizon-tuned stepsize)
    horizon_t: int = 100
    batch_b: int = 8
    lambda_env: Optional[float] = None  # None means "auto" (0.5 / kappa)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.eps_smooth <= 0:
            raise ValueError("eps_smooth must be positive")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.horizon_t < 1 or self.batch_b < 1:
            raise ValueError("horizon_t and batch_b must be >= 1")

    @property
    def lam(self):
        return self.rho * self.beta

    def replace(self, **kw):
        import dataclasses

        return dataclasses.replace(self, **kw)


def softplus(t):
    """log(1 + exp(t)), stable for large |t|."""
    t = np.asarray(t, dtype=float)
    out = np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def _sigmoid(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def per_sample_losses(env: Environment, params: PolicyParams, hyper: Hyperparams,
                      z: ComparisonTriple):
    """(ell1, ell0) for triple z: softplus(-beta h) and softplus(beta h)."""
    h = pairwise_logit(env, params, z)
    return softplus(-hyper.beta * h), softplus(hyper.beta * h)


class ExactEvaluator:
    """Vectorized exact evaluation over the enumerated triple set.

    Precomputes every theta-independent table once so that repeated
    evaluations along an optimization trajectory stay cheap.
    """

    def __init__(self, env: Environment, oracle: Optional[TrueOracle],
                 hyper: Hyperparams, theta_ref, cap=DEFAULT_ENUMERATION_CAP):
        self.env = env
        self.hyper = hyper
        self.theta_ref = np.asarray(theta_ref, dtype=float)
        xs, y1s, y2s = triple_index_arrays(env, cap)
        self._xs, self._y1s, self._y2s = xs, y1s, y2s
        self._mu_x = env.mu[xs]
        self._dpsi = env.features[xs, y1s] - env.features[xs, y2s]
        self._psi_sum = env.features[xs, y1s] + env.features[xs, y2s]
        if oracle is not None:
            self._pstar = true_prob_table(oracle, xs, y1s, y2s)
        else:
            self._pstar = None

    # -- per-theta tables -------------------------------------------------

    def policy_tables(self, theta):
        """(pi, d, s, S): policy table, triple weights, pairwise scores, triple scores."""
        env = self.env
        logits = env.features @ theta
        shift = logits.max(axis=1, keepdims=True)
        expd = np.exp(logits - shift)
        pi = expd / expd.sum(axis=1, keepdims=True)
        d = self._mu_x * pi[self._xs, self._y1s] * pi[self._xs, self._y2s]
        s = self._dpsi @ (theta - self.theta_ref)
        mean = np.einsum("xy,xyd->xd", pi, env.features)
        score = self._psi_sum - 2.0 * mean[self._xs]
        return pi, d, s, score

    def _losses(self, s):
        bs = self.hyper.beta * s
        return softplus(-bs), softplus(bs)

    # -- values -----------------------------------------------------------

    def sail_loss(self, theta):
        _, d, s, _ = self.policy_tables(theta)
        ell1, ell0 = self._losses(s)
        per = d * (self._pstar * ell1 + (1.0 - self._pstar) * ell0)
        return math.fsum(per)

    def penalty(self, theta):
        _, d, s, _ = self.policy_tables(theta)
        return math.fsum(d * np.abs(s))

    def penalty_smoothed(self, theta, eps=None):
        eps = self.hyper.eps_smooth if eps is None else eps
        _, d, s, _ = self.policy_tables(theta)
        return math.fsum(d * np.sqrt(s * s + eps * eps))

    def robust_closed_form(self, theta):
        return self.sail_loss(theta) + self.hyper.lam * self.penalty(theta)

    def robust_worstcase(self, theta):
        """Worst-case route: expectation of the pointwise supremum."""
        rho = self.hyper.rho
        _, d, s, _ = self.policy_tables(theta)
        ell1, ell0 = self._losses(s)
        sup = self._pstar * ell1 + (1.0 - self._pstar) * ell0 + rho * np.abs(ell1 - ell0)
        return math.fsum(d * sup)

    # -- gradients --------------------------------------------------------

    def sail_grad(self, theta):
        beta = self.hyper.beta
        _, d, s, score = self.policy_tables(theta)
        ell1, ell0 = self._losses(s)
        p = self._pstar
        sig_p = _sigmoid(beta * s)
        sig_m = 1.0 - sig_p
        dldh = beta * ((1.0 - p) * sig_p - p * sig_m)
        ellbar = p * ell1 + (1.0 - p) * ell0
        terms = dldh[:, None] * self._dpsi + ellbar[:, None] * score
        return d @ terms

    def penalty_subgrad(self, theta):
        """Element of the penalty subdifferential, with sign(0) := 0."""
        _, d, s, score = self.policy_tables(theta)
        terms = np.sign(s)[:, None] * self._dpsi + np.abs(s)[:, None] * score
        return d @ terms

    def penalty_grad_smoothed(self, theta, eps=None):
        eps = self.hyper.eps_smooth if eps is None else eps
        _, d, s, score = self.policy_tables(theta)
        phi = np.sqrt(s * s + eps * eps)
        terms = (s / phi)[:, None] * self._dpsi + phi[:, None] * score
        return d @ terms

    def smoothed_value_grad(self, theta, eps=None):
        """(value, gradient) of the smoothed robust objective L_SAIL + lam * R_eps.

        Single pass over the tables; used by the prox inner loop.
        """
        eps = self.hyper.eps_smooth if eps is None else eps
        beta, lam = self.hyper.beta, self.hyper.lam
        _, d, s, score = self.policy_tables(theta)
        ell1, ell0 = self._losses(s)
        p = self._pstar
        phi = np.sqrt(s * s + eps * eps)
        value = float(d @ (p * ell1 + (1.0 - p) * ell0 + lam * phi))
        sig_p = _sigmoid(beta * s)
        dldh = beta * ((1.0 - p) * sig_p - p * (1.0 - sig_p))
        ellbar = p * ell1 + (1.0 - p) * ell0
        coeff_dpsi = dldh + lam * (s / phi)
        coeff_score = ellbar + lam * phi
        grad = (d * coeff_dpsi) @ self._dpsi + (d * coeff_score) @ score
        return value, grad


# -- spec-level wrappers ---------------------------------------------------


def _evaluator(env, params, hyper, oracle=None, cap=DEFAULT_ENUMERATION_CAP):
    return ExactEvaluator(env, oracle, hyper, params.theta_ref, cap)


def sail_loss_exact(env, params, oracle, hyper, cap=DEFAULT_ENUMERATION_CAP):
    return _evaluator(env, params, hyper, oracle, cap).sail_loss(params.theta)


def robust_penalty_exact(env, params, hyper, cap=DEFAULT_ENUMERATION_CAP):
    return _evaluator(env, params, hyper, None, cap).penalty(params.theta)


def robust_penalty_smoothed(env, params, hyper, cap=DEFAULT_ENUMERATION_CAP):
    return _evaluator(env, params, hyper, None, cap).penalty_smoothed(params.theta)


def robust_objective_closed_form(env, params, oracle, cfg: UncertaintyConfig,
                                 hyper, cap=DEFAULT_ENUMERATION_CAP):
    cfg.check_admissible(oracle)
    hyper = hyper.replace(rho=cfg.rho)
    return _evaluator(env, params, hyper, oracle, cap).robust_closed_form(params.theta)


def robust_objective_worstcase(env, params, oracle, cfg: UncertaintyConfig,
                               hyper, cap=DEFAULT_ENUMERATION_CAP):
    cfg.check_admissible(oracle)
    hyper = hyper.replace(rho=cfg.rho)
    return _evaluator(env, params, hyper, oracle, cap).robust_worstcase(params.theta)


def sail_grad_exact(env, params, oracle, hyper, cap=DEFAULT_ENUMERATION_CAP):
    return _evaluator(env, params, hyper, oracle, cap).sail_grad(params.theta)


def penalty_subgrad_exact(env, params, hyper, cap=DEFAULT_ENUMERATION_CAP):
    return _evaluator(env, params, hyper, None, cap).penalty_subgrad(params.theta)


# -- constants ledger ------------------------------------------------------


@dataclass(frozen=True)
class ConstantsBundle:
    """Every theoretical constant the guarantees consume, fully materialized."""

    b_psi: float
    radius_d: float
    g_score: float  # 2 B_psi
    m_score: float  # B_psi^2
    kappa_r: float  # 16 B_psi^2 + 4 D B_psi^3
    l_sail_smooth: float
    kappa: float  # l_sail_smooth + lam * kappa_r
    lambda_env: float
    l_env: float  # 1 / (lambda_env (1 - kappa lambda_env))
    g_grad_sail: float
    g_sub_r: float
    sigma2_sail: float
    sigma2_r: float
    g_tot2: float
    f_inf: float

    def to_json_dict(self):
        import dataclasses

        return dataclasses.asdict(self)


def penalty_curvature_bound(b_psi, radius_d, eps=0.0):
    """Negative-curvature allowance for the (eps-smoothed) penalty."""
    g = 2.0 * b_psi
    m = b_psi**2
    return 8.0 * g * b_psi + 4.0 * m * radius_d * b_psi + 2.0 * m * eps


def g_grad_sail_bound(beta, b_psi, radius_d):
    return 2.0 * beta * b_psi + 4.0 * b_psi * (LOG2 + 2.0 * beta * radius_d * b_psi)


def g_sub_r_bound(b_psi, radius_d):
    return 2.0 * b_psi + 8.0 * radius_d * b_psi**2


def check_lambda_env(lambda_env, kappa):
    if not (0.0 < lambda_env < 1.0 / kappa):
        raise InvalidEnvelopeParam(
            f"lambda_env={lambda_env} must lie in (0, 1/kappa) = (0, {1.0 / kappa})"
        )


def estimate_l_sail_smooth(env, params, oracle, hyper, n_probes=64, seed=0,
                           safety=1.5):
    """Estimate the gradient Lipschitz constant of the alignment loss.

    Max spectral norm of the finite-difference Hessian over random feasible
    theta, times a safety factor. The loss is smooth on the finite space but
    no closed-form constant is available.
    """
    ev = _evaluator(env, params, hyper, oracle)
    rng = np.random.default_rng(seed)
    d = params.theta.size
    worst = 0.0
    for _ in range(n_probes):
        u = rng.standard_normal(d)
        u *= rng.uniform(0.0, params.radius_d) / np.linalg.norm(u)
        theta = params.theta_ref + u
        hess = fd_hessian_from_grad(ev.sail_grad, theta)
        worst = max(worst, float(np.linalg.norm(hess, 2)))
    return safety * worst


def estimate_oracle_variances(env, params, oracle, hyper, n_draws=10_000,
                              seed=0, safety=2.0):
    """Empirical single-sample variances of the two stochastic oracles at theta.

    sigma2_sail is the variance of the single-sample alignment gradient around
    its exact mean; sigma2_r is the mean squared distance from the
    single-sample penalty term to the exact subgradient.
    """
    from .optimizer import penalty_subgrad_samples, sail_grad_samples, sample_batch

    rng = np.random.default_rng(seed)
    batch = sample_batch(env, params, oracle, UncertaintyConfig(rho=hyper.rho),
                         hyper, rng, n_draws, oracle_mode="true")
    g_sail = sail_grad_samples(env, params, hyper, batch)
    g_pen = penalty_subgrad_samples(env, params, hyper, batch)
    ev = _evaluator(env, params, hyper, oracle)
    exact_sail = ev.sail_grad(params.theta)
    exact_pen = ev.penalty_subgrad(params.theta)
    var_sail = float(np.mean(np.sum((g_sail - exact_sail) ** 2, axis=1)))
    var_pen = float(np.mean(np.sum((g_pen - exact_pen) ** 2, axis=1)))
    return safety * var_sail, safety * var_pen


def constants_bundle(env, params, oracle, hyper, l_sail_smooth=None,
                     sigma2_sail=None, sigma2_r=None, lambda_env=None,
                     seed=0) -> ConstantsBundle:
    """Populate the full constants bundle for (env, feasible set, hyper).

    Unsupplied quantities are estimated: the smoothness constant from
    finite-difference Hessian probes, the oracle variances from single-sample
    draws at the current theta. lambda_env defaults to the midpoint 0.5/kappa.
    """
    b_psi = env.b_psi
    radius_d = params.radius_d
    lam = hyper.lam
    if l_sail_smooth is None:
        l_sail_smooth = estimate_l_sail_smooth(env, params, oracle, hyper, seed=seed)
    if sigma2_sail is None or sigma2_r is None:
        est_sail, est_r = estimate_oracle_variances(env, params, oracle, hyper,
                                                    seed=seed)
        sigma2_sail = est_sail if sigma2_sail is None else sigma2_sail
        sigma2_r = est_r if sigma2_r is None else sigma2_r
    kappa_r = 16.0 * b_psi**2 + 4.0 * radius_d * b_psi**3
    kappa = l_sail_smooth + lam * kappa_r
    if lambda_env is None:
        lambda_env = hyper.lambda_env
    if lambda_env is None:
        lambda_env = 0.5 / kappa
    check_lambda_env(lambda_env, kappa)
    g_grad_sail = g_grad_sail_bound(hyper.beta, b_psi, radius_d)
    g_sub_r = g_sub_r_bound(b_psi, radius_d)
    g_tot2 = 4.0 * (g_grad_sail**2 + lam**2 * g_sub_r**2
                    + (sigma2_sail + lam**2 * sigma2_r) / hyper.batch_b)
    return ConstantsBundle(
        b_psi=b_psi,
        radius_d=radius_d,
        g_score=2.0 * b_psi,
        m_score=b_psi**2,
        kappa_r=kappa_r,
        l_sail_smooth=float(l_sail_smooth),
        kappa=kappa,
        lambda_env=float(lambda_env),
        l_env=1.0 / (lambda_env * (1.0 - kappa * lambda_env)),
        g_grad_sail=g_grad_sail,
        g_sub_r=g_sub_r,
        sigma2_sail=float(sigma2_sail),
        sigma2_r=float(sigma2_r),
        g_tot2=g_tot2,
        f_inf=0.0,
    )
