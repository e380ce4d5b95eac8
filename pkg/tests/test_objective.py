import math

import numpy as np
import pytest

from robust_align.environment import enumerate_triples, random_environment
from robust_align.errors import InvalidEnvelopeParam
from robust_align.numdiff import fd_gradient
from robust_align.objective import (
    ExactEvaluator,
    Hyperparams,
    check_lambda_env,
    constants_bundle,
    penalty_subgrad_exact,
    per_sample_losses,
    robust_objective_closed_form,
    robust_objective_worstcase,
    robust_penalty_exact,
    robust_penalty_smoothed,
    sail_grad_exact,
    sail_loss_exact,
    softplus,
)
from robust_align.oracle import TrueOracle, UncertaintyConfig, random_oracle, true_prob
from robust_align.policy import PolicyParams, pairwise_logit, sampling_distribution

ENV = random_environment(21, 2, 3, 3)
ORACLE = random_oracle(22, 2, 3)
REF = np.array([0.05, -0.1, 0.2])
PARAMS = PolicyParams(theta=REF + np.array([0.3, -0.2, 0.1]), theta_ref=REF,
                      radius_d=1.0)
RHO = 0.5 * ORACLE.delta
HYPER = Hyperparams(beta=1.2, rho=RHO)
CFG = UncertaintyConfig(RHO)


def test_softplus_matches_naive_and_is_stable():
    for t in (-3.0, 0.0, 2.5):
        assert softplus(t) == pytest.approx(math.log1p(math.exp(t)))
    assert softplus(1000.0) == pytest.approx(1000.0)
    assert softplus(-1000.0) == pytest.approx(0.0)


def test_hyperparams_validation_and_lam():
    assert HYPER.lam == pytest.approx(RHO * 1.2)
    with pytest.raises(ValueError):
        Hyperparams(beta=0.0, rho=0.1)
    with pytest.raises(ValueError):
        Hyperparams(beta=1.0, rho=-0.1)
    with pytest.raises(ValueError):
        Hyperparams(beta=1.0, rho=0.1, eta=-1.0)


def test_per_sample_loss_difference_is_linear_in_the_logit():
    # softplus(-u) - softplus(u) == -u up to one rounding of the shared term
    for z in enumerate_triples(ENV):
        ell1, ell0 = per_sample_losses(ENV, PARAMS, HYPER, z)
        h = pairwise_logit(ENV, PARAMS, z)
        assert ell1 - ell0 == pytest.approx(-HYPER.beta * h, abs=1e-15)


def test_sail_loss_matches_direct_enumeration():
    expected = 0.0
    d = sampling_distribution(ENV, PARAMS)
    for i, z in enumerate(enumerate_triples(ENV)):
        ell1, ell0 = per_sample_losses(ENV, PARAMS, HYPER, z)
        p = true_prob(ORACLE, ENV, z)
        expected += d[i] * (p * ell1 + (1.0 - p) * ell0)
    assert sail_loss_exact(ENV, PARAMS, ORACLE, HYPER) == pytest.approx(
        expected, abs=1e-14)


def test_penalty_matches_direct_enumeration():
    d = sampling_distribution(ENV, PARAMS)
    expected = sum(d[i] * abs(pairwise_logit(ENV, PARAMS, z))
                   for i, z in enumerate(enumerate_triples(ENV)))
    assert robust_penalty_exact(ENV, PARAMS, HYPER) == pytest.approx(
        expected, abs=1e-14)


def test_smoothed_penalty_brackets_the_penalty():
    pen = robust_penalty_exact(ENV, PARAMS, HYPER)
    pen_eps = robust_penalty_smoothed(ENV, PARAMS, HYPER)
    assert pen <= pen_eps <= pen + HYPER.eps_smooth


def test_decomposition_of_the_worst_case_objective():
    lhs = robust_objective_worstcase(ENV, PARAMS, ORACLE, CFG, HYPER)
    rhs = robust_objective_closed_form(ENV, PARAMS, ORACLE, CFG, HYPER)
    assert abs(lhs - rhs) <= 1e-12
    sail = sail_loss_exact(ENV, PARAMS, ORACLE, HYPER)
    pen = robust_penalty_exact(ENV, PARAMS, HYPER)
    assert rhs == pytest.approx(sail + HYPER.lam * pen, abs=1e-14)


def test_sail_gradient_matches_finite_differences():
    ev = ExactEvaluator(ENV, ORACLE, HYPER, REF)
    exact = sail_grad_exact(ENV, PARAMS, ORACLE, HYPER)
    fd = fd_gradient(ev.sail_loss, PARAMS.theta)
    assert np.linalg.norm(fd - exact) <= 1e-7 * max(1.0, np.linalg.norm(exact))


def test_smoothed_penalty_gradient_matches_finite_differences():
    ev = ExactEvaluator(ENV, ORACLE, HYPER, REF)
    eps = 1e-4
    exact = ev.penalty_grad_smoothed(PARAMS.theta, eps)
    fd = fd_gradient(lambda th: ev.penalty_smoothed(th, eps), PARAMS.theta)
    assert np.linalg.norm(fd - exact) <= 1e-6 * max(1.0, np.linalg.norm(exact))


def test_penalty_subgradient_matches_smoothed_limit_away_from_kinks():
    sub = penalty_subgrad_exact(ENV, PARAMS, HYPER)
    ev = ExactEvaluator(ENV, ORACLE, HYPER, REF)
    smooth = ev.penalty_grad_smoothed(PARAMS.theta, 1e-12)
    np.testing.assert_allclose(sub, smooth, atol=1e-8)


def test_smoothed_value_grad_agrees_with_components():
    ev = ExactEvaluator(ENV, ORACLE, HYPER, REF)
    value, grad = ev.smoothed_value_grad(PARAMS.theta)
    expected_v = (ev.sail_loss(PARAMS.theta)
                  + HYPER.lam * ev.penalty_smoothed(PARAMS.theta))
    expected_g = (ev.sail_grad(PARAMS.theta)
                  + HYPER.lam * ev.penalty_grad_smoothed(PARAMS.theta))
    assert value == pytest.approx(expected_v, abs=1e-12)
    np.testing.assert_allclose(grad, expected_g, atol=1e-12)


def test_constants_bundle_is_coherent():
    bundle = constants_bundle(ENV, PARAMS, ORACLE, HYPER, seed=1)
    assert bundle.g_score == pytest.approx(2.0 * ENV.b_psi)
    assert bundle.m_score == pytest.approx(ENV.b_psi**2)
    assert bundle.kappa_r == pytest.approx(
        16.0 * ENV.b_psi**2 + 4.0 * PARAMS.radius_d * ENV.b_psi**3)
    assert bundle.kappa == pytest.approx(
        bundle.l_sail_smooth + HYPER.lam * bundle.kappa_r)
    assert 0.0 < bundle.lambda_env < 1.0 / bundle.kappa
    assert bundle.l_env == pytest.approx(
        1.0 / (bundle.lambda_env * (1.0 - bundle.kappa * bundle.lambda_env)))
    assert bundle.g_tot2 > 0
    assert bundle.f_inf == 0.0


def test_lambda_env_window_is_enforced():
    check_lambda_env(0.1, 1.0)
    with pytest.raises(InvalidEnvelopeParam):
        check_lambda_env(1.5, 1.0)
    with pytest.raises(InvalidEnvelopeParam):
        check_lambda_env(0.0, 1.0)
