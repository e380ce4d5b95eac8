"""Bradley-Terry true oracle, its margin, and the worst-case adversarial oracle."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .environment import ComparisonTriple, Environment
from .errors import InadmissibleRadius, IntervalOutOfRange
from .policy import PolicyParams, pairwise_logit


def sigmoid(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TrueOracle:
    """Latent reward table r*(x, y) with its nondegeneracy margin.

    delta is always recomputed from the reward table: the largest value such
    that every pairwise preference probability lies in [delta, 1 - delta].
    """

    reward: np.ndarray
    delta: float = field(init=False)

    def __post_init__(self):
        reward = np.asarray(self.reward, dtype=float)
        if reward.ndim != 2:
            raise ValueError("reward table must be 2-D (prompts x responses)")
        if not np.all(np.isfinite(reward)):
            raise ValueError("reward table contains non-finite entries")
        reward.setflags(write=False)
        object.__setattr__(self, "reward", reward)
        max_gap = float(np.abs(reward[:, :, None] - reward[:, None, :]).max())
        object.__setattr__(self, "delta", float(sigmoid(-max_gap)))

    def to_json_dict(self):
        return {"reward": self.reward.tolist()}


@dataclass(frozen=True)
class UncertaintyConfig:
    """Pointwise uncertainty radius rho on the preference probability."""

    rho: float

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        object.__setattr__(self, "rho", float(self.rho))

    def check_admissible(self, oracle: TrueOracle):
        if self.rho > 0 and self.rho >= oracle.delta:
            raise InadmissibleRadius(
                f"rho={self.rho} must be < oracle margin delta={oracle.delta}"
            )


def oracle_from_json(doc) -> TrueOracle:
    if isinstance(doc, str):
        doc = json.loads(doc)
    return TrueOracle(reward=np.asarray(doc["reward"], dtype=float))


def random_oracle(seed, n_prompts, n_responses, reward_scale=1.0) -> TrueOracle:
    """Random reward table with entries uniform in [-reward_scale, reward_scale]."""
    rng = np.random.default_rng(seed)
    return TrueOracle(reward=rng.uniform(-reward_scale, reward_scale,
                                         size=(n_prompts, n_responses)))


def compute_margin(oracle: TrueOracle, env: Environment = None):
    """Largest delta with delta <= p*(z) <= 1 - delta for all triples."""
    return oracle.delta


def true_prob(oracle: TrueOracle, env: Environment, z: ComparisonTriple):
    """p*(z) = sigmoid(r*(x, y1) - r*(x, y2))."""
    x, y1, y2 = z
    return float(sigmoid(oracle.reward[x, y1] - oracle.reward[x, y2]))


def true_prob_table(oracle: TrueOracle, xs, y1s, y2s):
    """p*(z) for index arrays of triples."""
    return sigmoid(oracle.reward[xs, y1s] - oracle.reward[xs, y2s])


def worst_case_prob(oracle: TrueOracle, cfg: UncertaintyConfig, env: Environment,
                    params: PolicyParams, hyper, z: ComparisonTriple):
    """Adversarial endpoint of the perturbation interval at triple z.

    Returns p*(z) + rho when ell1 >= ell0 (equivalently h_theta(z) <= 0),
    else p*(z) - rho. Ties at h = 0 go to the +rho endpoint; the supremum
    value is unaffected there.
    """
    cfg.check_admissible(oracle)
    p = true_prob(oracle, env, z)
    h = pairwise_logit(env, params, z)
    if h <= 0:
        return p + cfg.rho
    return p - cfg.rho


def pointwise_sup_value(p_star, rho, a, b):
    """Closed-form sup of p*a + (1-p)*b over p in [p* - rho, p* + rho].

    Equals p* a + (1 - p*) b + rho |a - b|; requires the interval to stay
    inside [0, 1].
    """
    if p_star - rho < -1e-15 or p_star + rho > 1 + 1e-15:
        raise IntervalOutOfRange(
            f"[{p_star - rho}, {p_star + rho}] is not contained in [0, 1]"
        )
    return p_star * a + (1.0 - p_star) * b + rho * abs(a - b)


def sample_label(oracle_mode, oracle: TrueOracle, cfg: UncertaintyConfig,
                 env: Environment, params: PolicyParams, hyper,
                 z: ComparisonTriple, rng):
    """Bernoulli preference label for triple z; 1 means y1 preferred over y2.

    mode "true" draws from p*(z) and ignores rho; mode "adversarial" draws
    from the worst-case endpoint at the current theta.
    """
    if oracle_mode == "true":
        p = true_prob(oracle, env, z)
    elif oracle_mode == "adversarial":
        p = worst_case_prob(oracle, cfg, env, params, hyper, z)
    else:
        raise ValueError(f"unknown oracle_mode {oracle_mode!r}")
    return int(rng.random() < p)
