"""Finite comparison universe: prompts, responses, prompt distribution, features.

An :class:`Environment` owns everything needed to enumerate the set of
comparison triples z = (x, y1, y2) exactly, which is what makes every
expectation in the rest of the package computable in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EnumerationCapExceeded

DEFAULT_ENUMERATION_CAP = 10**6

_MU_TOL = 1e-12
_NORM_TOL = 1e-9


class ComparisonTriple(NamedTuple):
    x: int
    y1: int
    y2: int


@dataclass(frozen=True)
class Environment:
    """Immutable finite environment.

    features has shape (n_prompts, n_responses, dim). b_psi upper-bounds the
    Euclidean norm of every feature vector; when supplied it is validated
    against the table, when omitted it is set to the exact maximum norm.
    """

    prompts: tuple
    responses: tuple
    mu: np.ndarray
    features: np.ndarray
    b_psi: float = field(default=None)

    def __post_init__(self):
        prompts = tuple(self.prompts)
        responses = tuple(self.responses)
        if not prompts or not responses:
            raise ValueError("prompts and responses must be nonempty")
        mu = np.asarray(self.mu, dtype=float)
        features = np.asarray(self.features, dtype=float)
        if mu.shape != (len(prompts),):
            raise ValueError(f"mu has shape {mu.shape}, expected ({len(prompts)},)")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > _MU_TOL:
            raise ValueError("mu must be nonnegative and sum to 1 within 1e-12")
        if features.ndim != 3 or features.shape[:2] != (len(prompts), len(responses)):
            raise ValueError(
                f"features has shape {features.shape}, expected "
                f"({len(prompts)}, {len(responses)}, dim)"
            )
        if not np.all(np.isfinite(features)):
            raise ValueError("feature table contains non-finite entries")
        max_norm = float(np.linalg.norm(features, axis=2).max())
        b_psi = self.b_psi
        if b_psi is None:
            b_psi = max_norm
        elif max_norm > b_psi + _NORM_TOL:
            raise ValueError(
                f"supplied b_psi={b_psi} violated: max feature norm is {max_norm}"
            )
        mu.setflags(write=False)
        features.setflags(write=False)
        object.__setattr__(self, "prompts", prompts)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "b_psi", float(b_psi))

    @property
    def n_prompts(self):
        return len(self.prompts)

    @property
    def n_responses(self):
        return len(self.responses)

    @property
    def feature_dim(self):
        return self.features.shape[2]

    @property
    def n_triples(self):
        return self.n_prompts * self.n_responses**2

    def to_json_dict(self):
        return {
            "prompts": list(self.prompts),
            "responses": list(self.responses),
            "mu": self.mu.tolist(),
            "feature_dim": self.feature_dim,
            "features": self.features.reshape(-1, self.feature_dim).tolist(),
        }


def environment_from_json(doc) -> Environment:
    """Build an Environment from a parsed JSON document (or a JSON string)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    prompts = doc["prompts"]
    responses = doc["responses"]
    dim = int(doc["feature_dim"])
    flat = np.asarray(doc["features"], dtype=float)
    features = flat.reshape(len(prompts), len(responses), dim)
    return Environment(
        prompts=tuple(prompts),
        responses=tuple(responses),
        mu=np.asarray(doc["mu"], dtype=float),
        features=features,
        b_psi=doc.get("b_psi"),
    )


def random_environment(
    seed,
    n_prompts,
    n_responses,
    dim,
    feature_scale=1.0,
    target_b_psi=None,
    uniform_mu=False,
) -> Environment:
    """Generate a random environment from a seed.

    Feature entries are uniform in [-feature_scale, feature_scale]; if
    target_b_psi is given the whole table is rescaled so the max feature
    norm equals it exactly.
    """
    rng = np.random.default_rng(seed)
    if uniform_mu:
        mu = np.full(n_prompts, 1.0 / n_prompts)
    else:
        raw = rng.uniform(0.5, 1.5, size=n_prompts)
        mu = raw / raw.sum()
    features = rng.uniform(-feature_scale, feature_scale, size=(n_prompts, n_responses, dim))
    if target_b_psi is not None:
        max_norm = np.linalg.norm(features, axis=2).max()
        features *= target_b_psi / max_norm
    return Environment(
        prompts=tuple(f"x{i}" for i in range(n_prompts)),
        responses=tuple(f"y{j}" for j in range(n_responses)),
        mu=mu,
        features=features,
    )


def check_cap(env: Environment, cap=DEFAULT_ENUMERATION_CAP):
    if env.n_triples > cap:
        raise EnumerationCapExceeded(
            f"|X|*|Y|^2 = {env.n_triples} exceeds enumeration cap {cap}"
        )


def triple_index_arrays(env: Environment, cap=DEFAULT_ENUMERATION_CAP):
    """Index arrays (xs, y1s, y2s) for all triples in lexicographic order."""
    check_cap(env, cap)
    nx, ny = env.n_prompts, env.n_responses
    xs = np.repeat(np.arange(nx), ny * ny)
    y1s = np.tile(np.repeat(np.arange(ny), ny), nx)
    y2s = np.tile(np.arange(ny), nx * ny)
    return xs, y1s, y2s


def enumerate_triples(env: Environment, cap=DEFAULT_ENUMERATION_CAP):
    """All |X|*|Y|^2 triples in lexicographic (x, y1, y2) order."""
    xs, y1s, y2s = triple_index_arrays(env, cap)
    return [ComparisonTriple(int(x), int(a), int(b)) for x, a, b in zip(xs, y1s, y2s)]


def delta_psi(env: Environment, z: ComparisonTriple):
    """Feature difference psi(x, y1) - psi(x, y2)."""
    x, y1, y2 = z
    return env.features[x, y1] - env.features[x, y2]


def delta_psi_table(env: Environment, cap=DEFAULT_ENUMERATION_CAP):
    """Feature differences for every triple, shape (n_triples, dim)."""
    xs, y1s, y2s = triple_index_arrays(env, cap)
    return env.features[xs, y1s] - env.features[xs, y2s]
