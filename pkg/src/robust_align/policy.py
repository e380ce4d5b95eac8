"""Log-linear softmax policy, its sampling distribution, and score functions."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .environment import (
    DEFAULT_ENUMERATION_CAP,
    ComparisonTriple,
    Environment,
    delta_psi,
    triple_index_arrays,
)

_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class PolicyParams:
    """Current parameter vector theta, reference theta_ref, and ball radius.

    The feasible set is the closed Euclidean ball of radius radius_d around
    theta_ref; membership is enforced at construction.
    """

    theta: np.ndarray
    theta_ref: np.ndarray
    radius_d: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        theta_ref = np.asarray(self.theta_ref, dtype=float)
        if theta.shape != theta_ref.shape or theta.ndim != 1:
            raise ValueError("theta and theta_ref must be 1-D vectors of equal length")
        if self.radius_d <= 0:
            raise ValueError("radius_d must be positive")
        if np.linalg.norm(theta - theta_ref) > self.radius_d + _FEAS_TOL:
            raise ValueError("theta is outside the feasible ball")
        theta.setflags(write=False)
        theta_ref.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "theta_ref", theta_ref)
        object.__setattr__(self, "radius_d", float(self.radius_d))

    def with_theta(self, theta):
        return PolicyParams(theta=np.asarray(theta, dtype=float),
                            theta_ref=self.theta_ref, radius_d=self.radius_d)

    def to_json_dict(self):
        return {
            "theta": self.theta.tolist(),
            "theta_ref": self.theta_ref.tolist(),
            "radius_d": self.radius_d,
        }


def params_from_json(doc) -> PolicyParams:
    if isinstance(doc, str):
        doc = json.loads(doc)
    return PolicyParams(
        theta=np.asarray(doc["theta"], dtype=float),
        theta_ref=np.asarray(doc["theta_ref"], dtype=float),
        radius_d=float(doc["radius_d"]),
    )


def log_policy_table(env: Environment, theta):
    """log pi_theta(y|x) for every (x, y), computed with max-shifted log-sum-exp."""
    logits = env.features @ theta  # (n_x, n_y)
    shift = logits.max(axis=1, keepdims=True)
    lse = shift + np.log(np.exp(logits - shift).sum(axis=1, keepdims=True))
    return logits - lse


def policy_table(env: Environment, theta):
    """pi_theta(y|x) for every (x, y)."""
    return np.exp(log_policy_table(env, theta))


def log_policy(env: Environment, params: PolicyParams, x, y):
    return float(log_policy_table(env, params.theta)[x, y])


def pairwise_logit(env: Environment, params: PolicyParams, z: ComparisonTriple):
    """Pairwise score s_theta(z) = (theta - theta_ref) . (psi(x,y1) - psi(x,y2)).

    Equal to the difference of policy/reference log-ratios between y1 and y2:
    the log-partition terms cancel.
    """
    return float((params.theta - params.theta_ref) @ delta_psi(env, z))


def pairwise_logit_table(env: Environment, params: PolicyParams, dpsi=None,
                         cap=DEFAULT_ENUMERATION_CAP):
    """s_theta(z) for all triples in enumeration order."""
    if dpsi is None:
        from .environment import delta_psi_table

        dpsi = delta_psi_table(env, cap)
    return dpsi @ (params.theta - params.theta_ref)


def sampling_distribution(env: Environment, params: PolicyParams,
                          cap=DEFAULT_ENUMERATION_CAP):
    """d_theta(z) = mu(x) pi(y1|x) pi(y2|x) over all triples, enumeration order."""
    xs, y1s, y2s = triple_index_arrays(env, cap)
    pi = policy_table(env, params.theta)
    return env.mu[xs] * pi[xs, y1s] * pi[xs, y2s]


def _categorical(cdf, u):
    # ties resolved toward the lower index: smallest i with cdf[i] >= u
    return int(np.searchsorted(cdf, u, side="left"))


def sample_triples(env: Environment, params: PolicyParams, rng, count):
    """count i.i.d. draws from d_theta via inverse-CDF sampling.

    Draws one prompt from mu then two independent responses from
    pi_theta(.|x) per triple; deterministic given the rng state.
    """
    pi = policy_table(env, params.theta)
    mu_cdf = np.cumsum(env.mu)
    pi_cdf = np.cumsum(pi, axis=1)
    out = []
    for _ in range(count):
        x = _categorical(mu_cdf, rng.random())
        y1 = _categorical(pi_cdf[x], rng.random())
        y2 = _categorical(pi_cdf[x], rng.random())
        out.append(ComparisonTriple(x, y1, y2))
    return out


def feature_mean(env: Environment, theta):
    """E_{y ~ pi_theta(.|x)}[psi(x, y)] per prompt, shape (n_x, dim)."""
    pi = policy_table(env, theta)
    return np.einsum("xy,xyd->xd", pi, env.features)


def score_table(env: Environment, theta):
    """Policy score g_theta(x, y) = psi(x, y) - feature_mean(x) for every (x, y)."""
    return env.features - feature_mean(env, theta)[:, None, :]


def policy_score(env: Environment, params: PolicyParams, x, y):
    """Gradient of log pi_theta(y|x) in theta."""
    return score_table(env, params.theta)[x, y]


def triple_score(env: Environment, params: PolicyParams, z: ComparisonTriple):
    """Gradient of log d_theta(z) in theta: g(x,y1) + g(x,y2)."""
    g = score_table(env, params.theta)
    x, y1, y2 = z
    return g[x, y1] + g[x, y2]


def triple_score_table(env: Environment, params: PolicyParams,
                       cap=DEFAULT_ENUMERATION_CAP):
    """S_theta(z) for all triples, shape (n_triples, dim)."""
    xs, y1s, y2s = triple_index_arrays(env, cap)
    g = score_table(env, params.theta)
    return g[xs, y1s] + g[xs, y2s]


def project_feasible(params: PolicyParams, candidate):
    """Euclidean projection of candidate onto the ball around theta_ref."""
    candidate = np.asarray(candidate, dtype=float)
    return project_ball(candidate, params.theta_ref, params.radius_d)


def project_ball(candidate, center, radius):
    diff = candidate - center
    norm = np.linalg.norm(diff)
    if norm <= radius:
        return candidate.copy()
    return center + (radius / norm) * diff
