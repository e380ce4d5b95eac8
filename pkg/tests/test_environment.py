import json

import numpy as np
import pytest

from robust_align.environment import (
    DEFAULT_ENUMERATION_CAP,
    ComparisonTriple,
    Environment,
    delta_psi,
    delta_psi_table,
    enumerate_triples,
    environment_from_json,
    random_environment,
    triple_index_arrays,
)
from robust_align.errors import EnumerationCapExceeded


def small_env():
    return Environment(
        prompts=("p0", "p1"),
        responses=("a", "b", "c"),
        mu=np.array([0.25, 0.75]),
        features=np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2) / 10.0,
    )


def test_validation_rejects_bad_mu():
    with pytest.raises(ValueError):
        Environment(prompts=("p",), responses=("a", "b"),
                    mu=np.array([0.9]), features=np.zeros((1, 2, 1)))


def test_validation_rejects_bad_feature_shape():
    with pytest.raises(ValueError):
        Environment(prompts=("p",), responses=("a", "b"),
                    mu=np.array([1.0]), features=np.zeros((2, 2, 1)))


def test_b_psi_defaults_to_max_norm_and_is_validated():
    env = small_env()
    norms = np.linalg.norm(env.features, axis=2)
    assert env.b_psi == pytest.approx(norms.max())
    with pytest.raises(ValueError):
        Environment(prompts=env.prompts, responses=env.responses, mu=env.mu,
                    features=env.features, b_psi=0.5 * norms.max())


def test_arrays_are_immutable():
    env = small_env()
    with pytest.raises(ValueError):
        env.mu[0] = 0.5
    with pytest.raises(ValueError):
        env.features[0, 0, 0] = 99.0


def test_enumeration_is_lexicographic_and_complete():
    env = small_env()
    triples = enumerate_triples(env)
    assert len(triples) == env.n_triples == 2 * 9
    assert triples[0] == ComparisonTriple(0, 0, 0)
    assert triples[1] == ComparisonTriple(0, 0, 1)
    assert triples == sorted(triples)
    assert len(set(triples)) == len(triples)


def test_cap_is_enforced():
    env = small_env()
    with pytest.raises(EnumerationCapExceeded):
        triple_index_arrays(env, cap=env.n_triples - 1)
    # default cap is generous
    assert DEFAULT_ENUMERATION_CAP >= 10**6


def test_delta_psi_matches_table():
    env = small_env()
    table = delta_psi_table(env)
    for i, z in enumerate(enumerate_triples(env)):
        np.testing.assert_allclose(table[i], delta_psi(env, z))


def test_json_round_trip():
    env = small_env()
    doc = json.loads(json.dumps(env.to_json_dict()))
    back = environment_from_json(doc)
    assert back.prompts == env.prompts
    np.testing.assert_allclose(back.features, env.features)
    np.testing.assert_allclose(back.mu, env.mu)


def test_random_environment_is_seeded_and_scaled():
    a = random_environment(7, 3, 4, 2, target_b_psi=0.8)
    b = random_environment(7, 3, 4, 2, target_b_psi=0.8)
    np.testing.assert_array_equal(a.features, b.features)
    assert a.b_psi == pytest.approx(0.8)
    assert a.mu.sum() == pytest.approx(1.0)
