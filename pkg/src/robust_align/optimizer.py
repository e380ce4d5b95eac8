"""Stochastic first-order oracles and the projected composite update loop."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .environment import ComparisonTriple, Environment
from .errors import NonFiniteIterate
from .objective import ExactEvaluator, Hyperparams, softplus, _sigmoid
from .oracle import TrueOracle, UncertaintyConfig, true_prob_table
from .policy import PolicyParams, policy_table, project_ball


@dataclass(frozen=True)
class MiniBatch:
    """A batch of comparison triples with Bernoulli preference labels.

    labels[i] == 1 means y1 was preferred over y2 in triple i.
    """

    xs: np.ndarray
    y1s: np.ndarray
    y2s: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.xs.size

    @property
    def triples(self):
        return [ComparisonTriple(int(x), int(a), int(b))
                for x, a, b in zip(self.xs, self.y1s, self.y2s)]


def sample_batch(env: Environment, params: PolicyParams, oracle: TrueOracle,
                 cfg: UncertaintyConfig, hyper: Hyperparams, rng, count,
                 oracle_mode="true", label_rng=None) -> MiniBatch:
    """Draw count i.i.d. triples from d_theta and label them.

    Triple draws use inverse-CDF sampling (ties toward the lower index);
    labels come from the true oracle or the worst-case endpoint at theta.
    A separate label_rng may be supplied to decouple the two streams.
    """
    if label_rng is None:
        label_rng = rng
    mu_cdf = np.cumsum(env.mu)
    pi_cdf = np.cumsum(policy_table(env, params.theta), axis=1)
    xs = np.searchsorted(mu_cdf, rng.random(count), side="left")
    y1s = np.empty(count, dtype=np.intp)
    y2s = np.empty(count, dtype=np.intp)
    u1 = rng.random(count)
    u2 = rng.random(count)
    for i in range(count):
        y1s[i] = np.searchsorted(pi_cdf[xs[i]], u1[i], side="left")
        y2s[i] = np.searchsorted(pi_cdf[xs[i]], u2[i], side="left")
    p = true_prob_table(oracle, xs, y1s, y2s)
    p = np.atleast_1d(p)
    if oracle_mode == "adversarial":
        cfg.check_admissible(oracle)
        dpsi = env.features[xs, y1s] - env.features[xs, y2s]
        h = dpsi @ (params.theta - params.theta_ref)
        p = np.where(h <= 0, p + cfg.rho, p - cfg.rho)
    elif oracle_mode != "true":
        raise ValueError(f"unknown oracle_mode {oracle_mode!r}")
    labels = (label_rng.random(count) < p).astype(np.int8)
    return MiniBatch(xs=xs, y1s=y1s, y2s=y2s, labels=labels)


def _batch_tables(env, params, batch):
    """Per-sample (dpsi, s, score) for the triples in the batch."""
    theta = params.theta
    dpsi = env.features[batch.xs, batch.y1s] - env.features[batch.xs, batch.y2s]
    s = dpsi @ (theta - params.theta_ref)
    pi = policy_table(env, theta)
    mean = np.einsum("xy,xyd->xd", pi, env.features)
    score = (env.features[batch.xs, batch.y1s] + env.features[batch.xs, batch.y2s]
             - 2.0 * mean[batch.xs])
    return dpsi, s, score


def sail_grad_samples(env, params, hyper: Hyperparams, batch: MiniBatch):
    """Per-sample alignment gradient terms, shape (B, dim).

    Each term is grad ell(z, y) + ell(z, y) * S(z) for the observed label y.
    """
    beta = hyper.beta
    dpsi, s, score = _batch_tables(env, params, batch)
    win = batch.labels.astype(bool)
    bs = beta * s
    ell = np.where(win, softplus(-bs), softplus(bs))
    sig_p = _sigmoid(bs)
    dldh = np.where(win, -beta * (1.0 - sig_p), beta * sig_p)
    return dldh[:, None] * dpsi + ell[:, None] * score


def penalty_subgrad_samples(env, params, hyper: Hyperparams, batch: MiniBatch):
    """Per-sample penalty subgradient terms (label-free), shape (B, dim)."""
    dpsi, s, score = _batch_tables(env, params, batch)
    return np.sign(s)[:, None] * dpsi + np.abs(s)[:, None] * score


def stoch_grad_sail(env, params, hyper, batch):
    """Batch-mean stochastic gradient of the alignment loss."""
    return sail_grad_samples(env, params, hyper, batch).mean(axis=0)


def stoch_subgrad_penalty(env, params, hyper, batch):
    """Batch-mean stochastic subgradient of the robustness penalty."""
    return penalty_subgrad_samples(env, params, hyper, batch).mean(axis=0)


def composite_direction(env, params, hyper, batch):
    """G_SAIL + lam * G_R at the current iterate."""
    return (stoch_grad_sail(env, params, hyper, batch)
            + hyper.lam * stoch_subgrad_penalty(env, params, hyper, batch))


@dataclass
class RunTrace:
    """Record of one projected stochastic run: all iterates plus metadata.

    env_grad_norms is filled post hoc by the envelope module.
    """

    thetas: np.ndarray  # (T+1, dim)
    output_index: int
    seed: int
    oracle_mode: str
    losses: Optional[np.ndarray] = None
    env_grad_norms: Optional[np.ndarray] = field(default=None)

    @property
    def horizon(self):
        return self.thetas.shape[0] - 1

    @property
    def output_theta(self):
        return self.thetas[self.output_index]


def rscgd_run(env: Environment, oracle: TrueOracle, cfg: UncertaintyConfig,
              hyper: Hyperparams, theta0, seed, oracle_mode="true",
              log_exact_loss=False) -> RunTrace:
    """Projected stochastic composite gradient descent over horizon_t steps.

    Each iteration resamples a fresh on-policy batch from d_theta, queries
    labels per oracle_mode, takes a step of size eta along the composite
    direction, and projects back onto the feasible ball. The output index is
    drawn uniformly from {0, ..., T-1} on a stream independent of the batch
    size, so changing batch_b leaves it unchanged.
    """
    if hyper.eta is None:
        raise ValueError("hyper.eta must be set (use corollary_stepsize for auto)")
    if not isinstance(theta0, PolicyParams):
        raise TypeError("theta0 must be a PolicyParams carrying theta_ref and radius")
    params = theta0
    ss = np.random.SeedSequence(seed)
    triple_ss, label_ss, index_ss = ss.spawn(3)
    triple_rng = np.random.default_rng(triple_ss)
    label_rng = np.random.default_rng(label_ss)
    index_rng = np.random.default_rng(index_ss)

    t_hor = hyper.horizon_t
    thetas = np.empty((t_hor + 1, params.theta.size))
    thetas[0] = params.theta
    losses = np.empty(t_hor + 1) if log_exact_loss else None
    evaluator = None
    if log_exact_loss:
        evaluator = ExactEvaluator(env, oracle, hyper, params.theta_ref)
    cur = params
    for t in range(t_hor):
        if losses is not None:
            losses[t] = evaluator.robust_closed_form(cur.theta)
        batch = sample_batch(env, cur, oracle, cfg, hyper, triple_rng,
                             hyper.batch_b, oracle_mode=oracle_mode,
                             label_rng=label_rng)
        direction = composite_direction(env, cur, hyper, batch)
        nxt = project_ball(cur.theta - hyper.eta * direction,
                           cur.theta_ref, cur.radius_d)
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteIterate(f"non-finite iterate at t={t + 1}")
        thetas[t + 1] = nxt
        cur = cur.with_theta(nxt)
    if losses is not None:
        losses[t_hor] = evaluator.robust_closed_form(cur.theta)
    output_index = int(index_rng.integers(0, t_hor))
    return RunTrace(thetas=thetas, output_index=output_index, seed=seed,
                    oracle_mode=oracle_mode, losses=losses)


def corollary_stepsize(bundle, hyper: Hyperparams, f_env_at_theta0):
    """Horizon-tuned stepsize that balances both terms of the rate bound."""
    lam_env = bundle.lambda_env
    gap = f_env_at_theta0 - bundle.f_inf
    if gap < 0:
        raise ValueError("f_env_at_theta0 must be >= f_inf")
    if gap == 0:
        warnings.warn("envelope value already at its lower bound; stepsize is 0")
    return float(np.sqrt(2.0 * lam_env * (1.0 - bundle.kappa * lam_env) * gap
                         / (bundle.g_tot2 * hyper.horizon_t)))


def corollary_bound(bundle, horizon_t, f_env_at_theta0):
    """Guaranteed mean squared envelope-gradient norm with the tuned stepsize."""
    lam_env = bundle.lambda_env
    gap = f_env_at_theta0 - bundle.f_inf
    return float(np.sqrt(2.0 * bundle.g_tot2 * gap
                         / (lam_env * (1.0 - bundle.kappa * lam_env) ** 3
                            * horizon_t)))


def rate_bound(bundle, eta, horizon_t, f_env_at_theta0):
    """Right-hand side of the envelope convergence rate at a given stepsize."""
    one_minus = 1.0 - bundle.kappa * bundle.lambda_env
    gap = f_env_at_theta0 - bundle.f_inf
    return (gap / (eta * one_minus * horizon_t)
            + bundle.l_env * eta * bundle.g_tot2 / (2.0 * one_minus))
