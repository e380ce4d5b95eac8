"""Executable claim suite: one named check per theoretical guarantee.

Each check is deterministic given (seed, config) and produces CheckReport
records with the measured quantity, the bound it must respect, and the slack.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .envelope import (
    ball_subdiff_residual,
    envelope_grad_along_trace,
    prox_point_generic,
    prox_solve,
    stationarity_certificate,
)
from .environment import Environment, random_environment
from .numdiff import fd_hessian_from_grad
from .objective import (
    ExactEvaluator,
    Hyperparams,
    constants_bundle,
    g_grad_sail_bound,
    g_sub_r_bound,
    penalty_curvature_bound,
)
from .optimizer import (
    composite_direction,
    corollary_bound,
    corollary_stepsize,
    rscgd_run,
    sample_batch,
)
from .oracle import TrueOracle, UncertaintyConfig, random_oracle
from .policy import PolicyParams, score_table

ONE_SIDED_TOL = 1e-6
EQUALITY_TOL = 1e-10
FD_REL_TOL = 1e-3

# What each check certifies. run_battery fails if any claim has no check.
CLAIMS = {
    "decomposition-identity": "worst-case objective equals loss plus weighted penalty",
    "pointwise-supremum": "closed-form endpoint supremum of the perturbed Bernoulli risk",
    "penalty-counterexample": "1-D closed form showing the penalty is not convex",
    "score-bounds": "policy and triple score norm bounds from bounded features",
    "fisher-bound": "operator-norm bound on the score second-moment matrix",
    "gradient-bounds": "norm bounds on the exact gradient and penalty subgradient",
    "second-moment-bound": "composite direction second-moment ceiling",
    "penalty-weak-convexity": "secant and smoothed-Hessian curvature bounds for the penalty",
    "composite-weak-convexity": "secant bound for the full robust objective",
    "envelope-properties": "residual identity, envelope gradient Lipschitz bound",
    "envelope-monotonicity": "inner-product lower bound between envelope and objective gradients",
    "no-universal-constant": "diverging stationarity ratio of the 1-D absolute-value instance",
    "inexact-prox-certificate": "residual-based near-stationarity certificate",
    "convergence-rate": "trajectory-mean envelope gradient bound at the tuned stepsize",
}

CHECK_CLAIMS = {
    "check_decomposition": ["decomposition-identity", "pointwise-supremum"],
    "check_counterexample": ["penalty-counterexample"],
    "check_constant_bounds": ["score-bounds", "fisher-bound", "gradient-bounds",
                              "second-moment-bound"],
    "check_weak_convexity": ["penalty-weak-convexity", "composite-weak-convexity"],
    "check_prox_lemmas": ["envelope-properties", "envelope-monotonicity",
                          "no-universal-constant", "inexact-prox-certificate"],
    "check_convergence": ["convergence-rate"],
}


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    measured: float
    bound: float
    slack: float
    config_digest: str
    seed: int

    def to_json_dict(self):
        return asdict(self)


def _digest(**config):
    payload = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _report(name, measured, bound, seed, digest, tol=ONE_SIDED_TOL):
    measured = float(measured)
    bound = float(bound)
    slack = bound - measured
    return CheckReport(name=name, passed=slack >= -tol, measured=measured,
                       bound=bound, slack=slack, config_digest=digest, seed=seed)


def coverage_gaps():
    """Claims declared in CLAIMS with no check claiming them."""
    covered = {c for claims in CHECK_CLAIMS.values() for c in claims}
    return sorted(set(CLAIMS) - covered)


# -- instance generation ---------------------------------------------------


def random_instance(rng, max_prompts=3, max_responses=5, max_dim=4):
    """A random small (env, oracle, params, cfg, hyper) tuple with rho < delta."""
    nx = int(rng.integers(1, max_prompts + 1))
    ny = int(rng.integers(2, max_responses + 1))
    dim = int(rng.integers(1, max_dim + 1))
    env = random_environment(int(rng.integers(2**31)), nx, ny, dim,
                             target_b_psi=float(rng.uniform(0.5, 1.5)))
    oracle = random_oracle(int(rng.integers(2**31)), nx, ny,
                           reward_scale=float(rng.uniform(0.2, 1.5)))
    rho = float(rng.uniform(0.0, 0.9 * oracle.delta))
    radius = float(rng.uniform(0.5, 2.0))
    theta_ref = rng.standard_normal(dim) * 0.3
    u = rng.standard_normal(dim)
    u *= rng.uniform(0.0, radius) / np.linalg.norm(u)
    params = PolicyParams(theta=theta_ref + u, theta_ref=theta_ref, radius_d=radius)
    hyper = Hyperparams(beta=float(rng.uniform(0.5, 2.0)), rho=rho)
    return env, oracle, params, UncertaintyConfig(rho), hyper


def _random_feasible_theta(rng, params):
    u = rng.standard_normal(params.theta.size)
    u *= rng.uniform(0.0, params.radius_d) / np.linalg.norm(u)
    return params.theta_ref + u


# -- checks ---------------------------------------------------------------


def check_decomposition(seed=0, n_instances=100):
    """Max gap between the worst-case-oracle route and the closed form."""
    digest = _digest(check="decomposition", seed=seed, n_instances=n_instances)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        env, oracle, params, cfg, hyper = random_instance(rng)
        ev = ExactEvaluator(env, oracle, hyper, params.theta_ref)
        lhs = ev.robust_worstcase(params.theta)
        rhs = ev.robust_closed_form(params.theta)
        worst = max(worst, abs(lhs - rhs))
    return _report("check_decomposition", worst, EQUALITY_TOL, seed, digest, tol=0.0)


def counterexample_environment(radius=3.0):
    """Single prompt, two responses, scalar features 1 and 0, reference at 0."""
    env = Environment(prompts=("x",), responses=("a", "b"), mu=np.array([1.0]),
                      features=np.array([[[1.0], [0.0]]]))
    params = PolicyParams(theta=np.zeros(1), theta_ref=np.zeros(1), radius_d=radius)
    return env, params


def counterexample_closed_form(theta):
    """2|theta| e^theta / (1 + e^theta)^2."""
    return 2.0 * abs(theta) * math.exp(theta) / (1.0 + math.exp(theta)) ** 2


def check_counterexample(seed=0):
    """Penalty matches its 1-D closed form and violates midpoint convexity."""
    digest = _digest(check="counterexample")
    env, params = counterexample_environment()
    hyper = Hyperparams(beta=1.0, rho=0.0)
    ev = ExactEvaluator(env, None, hyper, params.theta_ref)
    worst = 0.0
    for theta in (0.5, 1.0, 2.0, -1.0):
        worst = max(worst, abs(ev.penalty(np.array([theta]))
                               - counterexample_closed_form(theta)))
    e = math.e
    rational = (2.0 * e * (e - 1.0) * (e**3 - 1.0)
                / ((1.0 + e) ** 2 * (1.0 + e**2) ** 2))
    gap = ev.penalty(np.array([1.0])) - 0.5 * ev.penalty(np.array([2.0]))
    worst = max(worst, abs(gap - rational))
    if gap <= 0:
        worst = math.inf  # convexity violation must be strictly positive
    return _report("check_counterexample", worst, 1e-12, seed, digest, tol=0.0)


def check_constant_bounds(seed=0, n_probes=200):
    """Score, Fisher, gradient, Lipschitz, and second-moment bounds."""
    digest = _digest(check="constant_bounds", seed=seed, n_probes=n_probes)
    rng = np.random.default_rng(seed)
    env, oracle, params, cfg, hyper = random_instance(rng)
    b_psi = env.b_psi
    ev = ExactEvaluator(env, oracle, hyper, params.theta_ref)
    g_grad = g_grad_sail_bound(hyper.beta, b_psi, params.radius_d)
    g_sub = g_sub_r_bound(b_psi, params.radius_d)
    bundle = constants_bundle(env, params, oracle, hyper, seed=seed)

    max_score = max_triple = max_fisher = max_grad = max_lip = 0.0
    sq_norms = []
    batch_rng = np.random.default_rng(seed + 1)
    for i in range(n_probes):
        # boundary probes for the last quarter
        theta = _random_feasible_theta(rng, params)
        if i % 4 == 0:
            diff = theta - params.theta_ref
            theta = params.theta_ref + params.radius_d * diff / np.linalg.norm(diff)
        g = score_table(env, theta)
        max_score = max(max_score, float(np.linalg.norm(g, axis=2).max()))
        _, _, _, s_table = ev.policy_tables(theta)
        max_triple = max(max_triple, float(np.linalg.norm(s_table, axis=1).max()))
        pi = np.exp(env.features @ theta
                    - (env.features @ theta).max(axis=1, keepdims=True))
        pi /= pi.sum(axis=1, keepdims=True)
        fisher = np.einsum("x,xy,xyd,xye->de", env.mu, pi, g, g)
        max_fisher = max(max_fisher, float(np.linalg.eigvalsh(fisher).max()))
        max_grad = max(max_grad, float(np.linalg.norm(ev.sail_grad(theta))))
        theta2 = _random_feasible_theta(rng, params)
        denom = np.linalg.norm(theta - theta2)
        if denom > 1e-9:
            max_lip = max(max_lip, abs(ev.penalty(theta) - ev.penalty(theta2)) / denom)
        cur = params.with_theta(theta)
        batch = sample_batch(env, cur, oracle, cfg, hyper, batch_rng,
                             hyper.batch_b, label_rng=batch_rng)
        direction = composite_direction(env, cur, hyper, batch)
        sq_norms.append(float(direction @ direction))

    reports = [
        _report("check_constant_bounds/policy_score", max_score, 2.0 * b_psi,
                seed, digest),
        _report("check_constant_bounds/triple_score", max_triple, 4.0 * b_psi,
                seed, digest),
        _report("check_constant_bounds/fisher_opnorm", max_fisher, 4.0 * b_psi**2,
                seed, digest),
        _report("check_constant_bounds/sail_grad_norm", max_grad, g_grad,
                seed, digest),
        _report("check_constant_bounds/penalty_lipschitz", max_lip, g_sub,
                seed, digest),
        _report("check_constant_bounds/second_moment", float(np.mean(sq_norms)),
                bundle.g_tot2, seed, digest),
    ]
    return reports


def _secant_violation(f, theta_a, theta_b, t, curvature):
    mid = t * theta_a + (1.0 - t) * theta_b
    allowance = curvature * t * (1.0 - t) / 2.0 * float(
        np.linalg.norm(theta_a - theta_b) ** 2)
    return f(mid) - (t * f(theta_a) + (1.0 - t) * f(theta_b) + allowance)


def check_weak_convexity(seed=0, n_pairs=500, eps_list=(1e-2, 1e-4)):
    """Secant inequalities for the penalty and composite, smoothed Hessian floor."""
    digest = _digest(check="weak_convexity", seed=seed, n_pairs=n_pairs,
                     eps_list=eps_list)
    rng = np.random.default_rng(seed)
    env, oracle, params, cfg, hyper = random_instance(rng)
    ev = ExactEvaluator(env, oracle, hyper, params.theta_ref)
    bundle = constants_bundle(env, params, oracle, hyper, seed=seed)
    kappa_r = bundle.kappa_r

    worst_pen = -math.inf
    worst_comp = -math.inf
    for _ in range(n_pairs):
        a = _random_feasible_theta(rng, params)
        b = _random_feasible_theta(rng, params)
        t = float(rng.uniform(0.05, 0.95))
        worst_pen = max(worst_pen, _secant_violation(ev.penalty, a, b, t, kappa_r))
        worst_comp = max(worst_comp,
                         _secant_violation(ev.robust_closed_form, a, b, t,
                                           bundle.kappa))
    reports = [
        _report("check_weak_convexity/penalty_secant", worst_pen, 0.0, seed, digest),
        _report("check_weak_convexity/composite_secant", worst_comp, 0.0,
                seed, digest),
    ]
    for eps in eps_list:
        kappa_eps = penalty_curvature_bound(env.b_psi, params.radius_d, eps)
        worst_eig = math.inf
        for _ in range(8):
            theta = _random_feasible_theta(rng, params)
            hess = fd_hessian_from_grad(
                lambda th: ev.penalty_grad_smoothed(th, eps), theta)
            worst_eig = min(worst_eig, float(np.linalg.eigvalsh(hess).min()))
        reports.append(_report(f"check_weak_convexity/hessian_floor_eps{eps:g}",
                               -worst_eig, kappa_eps, seed, digest))
    return reports


def check_prox_lemmas(seed=0, n_probes=20):
    """Envelope identities, Lipschitz bound, monotonicity, and prox certificates."""
    digest = _digest(check="prox_lemmas", seed=seed, n_probes=n_probes)
    rng = np.random.default_rng(seed)
    env, oracle, params, cfg, hyper = random_instance(rng)
    hyper = hyper.replace(eps_smooth=1e-8)
    bundle = constants_bundle(env, params, oracle, hyper, seed=seed)
    lam_env = bundle.lambda_env
    ev = ExactEvaluator(env, oracle, hyper, params.theta_ref)

    reports = []
    # residual identity holds by construction; verify it bitwise anyway
    worst_identity = 0.0
    worst_lip = 0.0
    worst_mono = -math.inf
    worst_lb = -math.inf
    probes = []
    for _ in range(n_probes):
        theta = _random_feasible_theta(rng, params)
        res = prox_solve(env, oracle, cfg, hyper, bundle, params, theta,
                         eps_prox=1e-9, evaluator=ev)
        probes.append((theta, res))
        recon = (theta - res.prox_point) / lam_env
        worst_identity = max(worst_identity,
                             float(np.abs(recon - res.env_grad).max()))
    for i in range(len(probes)):
        for j in range(i + 1, len(probes)):
            ta, ra = probes[i]
            tb, rb = probes[j]
            denom = np.linalg.norm(ta - tb)
            if denom > 1e-9:
                ratio = np.linalg.norm(ra.env_grad - rb.env_grad) / denom
                worst_lip = max(worst_lip, float(ratio))
    for theta, res in probes:
        # gate: skip probes too close to a penalty kink or to the boundary
        # (triples with a zero feature difference have s = 0 identically and
        # contribute no kink, so they are excluded from the gate)
        _, _, s, _ = ev.policy_tables(theta)
        dpsi_norms = np.linalg.norm(ev._dpsi, axis=1)
        active = dpsi_norms > 1e-12
        interior = (np.linalg.norm(theta - params.theta_ref)
                    < 0.999 * params.radius_d)
        if active.any() and np.abs(s[active]).min() <= 10.0 * hyper.eps_smooth:
            continue
        if not interior:
            continue
        _, grad_f = ev.smoothed_value_grad(theta)
        xi = res.env_grad
        xi_sq = float(xi @ xi)
        worst_mono = max(worst_mono,
                         (1.0 - bundle.kappa * lam_env) * xi_sq - float(xi @ grad_f))
        worst_lb = max(worst_lb,
                       (1.0 - bundle.kappa * lam_env) * math.sqrt(xi_sq)
                       - float(np.linalg.norm(grad_f)))
    reports.append(_report("check_prox_lemmas/residual_identity", worst_identity,
                           0.0, seed, digest, tol=1e-14))
    reports.append(_report("check_prox_lemmas/envelope_lipschitz", worst_lip,
                           bundle.l_env, seed, digest))
    reports.append(_report("check_prox_lemmas/monotonicity", worst_mono, 0.0,
                           seed, digest))
    reports.append(_report("check_prox_lemmas/iterate_lower_bound", worst_lb, 0.0,
                           seed, digest))

    # inexact-prox certificate at two accuracy levels
    for eps_prox in (1e-5, 1e-8):
        worst_cert = -math.inf
        for theta, _ in probes[:8]:
            res = prox_solve(env, oracle, cfg, hyper, bundle, params, theta,
                             eps_prox=eps_prox, evaluator=ev)
            cert = stationarity_certificate(env, oracle, cfg, hyper, bundle,
                                            params, theta, res, eps_prox)
            _, grad_at_bar = ev.smoothed_value_grad(res.prox_point)
            dist = ball_subdiff_residual(grad_at_bar, res.prox_point,
                                         params.theta_ref, params.radius_d)
            worst_cert = max(worst_cert, dist - cert.certified_dist_bound)
        reports.append(_report(f"check_prox_lemmas/certificate_eps{eps_prox:g}",
                               worst_cert, 0.0, seed, digest))

    # 1-D absolute-value instance: prox at the origin, diverging ratio
    eps = 1e-10

    def abs_value_grad(u):
        phi = math.sqrt(u[0] ** 2 + eps**2)
        return phi, np.array([u[0] / phi])

    worst_abs = 0.0
    ratios = []
    for theta in (0.5, 0.1, 0.01):
        res = prox_point_generic(abs_value_grad, center=np.zeros(1), radius=100.0,
                                 lam_env=1.0, anchor=np.array([theta]),
                                 eps_prox=1e-12)
        worst_abs = max(worst_abs, abs(float(res.prox_point[0])))
        worst_abs = max(worst_abs, abs(float(res.env_grad[0]) - theta))
        dist_at_theta = abs(abs_value_grad(np.array([theta]))[1][0])
        ratios.append(dist_at_theta / float(np.linalg.norm(res.env_grad)))
    diverges = all(r2 > r1 for r1, r2 in zip(ratios, ratios[1:]))
    reports.append(_report("check_prox_lemmas/absolute_value_instance",
                           worst_abs if diverges else math.inf, 1e-6, seed,
                           digest, tol=0.0))
    return reports


def benchmark_instance(rho=0.05):
    """The fixed seeded benchmark used by the convergence check."""
    env = random_environment(1234, 2, 4, 3, target_b_psi=1.0)
    oracle = random_oracle(1235, 2, 4, reward_scale=1.0)
    theta_ref = np.zeros(3)
    params = PolicyParams(theta=theta_ref + np.array([0.4, 0.0, 0.0]),
                          theta_ref=theta_ref, radius_d=1.0)
    hyper = Hyperparams(beta=1.0, rho=rho, batch_b=8)
    return env, oracle, params, UncertaintyConfig(rho), hyper


def check_convergence(seed_count=16, t_list=(200, 800, 3200), rho=0.05,
                      seed=0, eps_prox=1e-5):
    """Seed-averaged trajectory-mean envelope gradient vs the tuned-rate bound."""
    digest = _digest(check="convergence", seed=seed, seed_count=seed_count,
                     t_list=list(t_list), rho=rho)
    env, oracle, params, cfg, hyper = benchmark_instance(rho)
    bundle = constants_bundle(env, params, oracle, hyper, seed=seed)
    f_env0, _ = _envelope_at(env, oracle, cfg, hyper, bundle, params,
                             params.theta)
    reports = []
    means = []
    for t_hor in t_list:
        hyper_t = hyper.replace(horizon_t=t_hor)
        eta = corollary_stepsize(bundle, hyper_t, f_env0)
        hyper_t = hyper_t.replace(eta=eta)
        mean_sqs = []
        for s in range(seed_count):
            trace = rscgd_run(env, oracle, cfg, hyper_t, params,
                              seed=seed * 1000 + s)
            _, summary = envelope_grad_along_trace(env, oracle, cfg, hyper_t,
                                                   bundle, params, trace,
                                                   eps_prox=eps_prox)
            mean_sqs.append(summary["trajectory_mean_sq_env_grad"])
        mean = float(np.mean(mean_sqs))
        means.append(mean)
        bound = corollary_bound(bundle, t_hor, f_env0)
        reports.append(_report(f"check_convergence/rho{rho:g}_T{t_hor}", mean,
                               bound, seed, digest))
    worst_increase = max((b - a for a, b in zip(means, means[1:])), default=0.0)
    reports.append(_report(f"check_convergence/rho{rho:g}_nonincreasing",
                           worst_increase, 0.0, seed, digest))
    return reports


def _envelope_at(env, oracle, cfg, hyper, bundle, params, theta):
    res = prox_solve(env, oracle, cfg, hyper, bundle, params, theta,
                     eps_prox=1e-8)
    return res.env_value, res.env_grad


ALL_CHECKS = {
    "decomposition": lambda seed: [check_decomposition(seed)],
    "counterexample": lambda seed: [check_counterexample(seed)],
    "constant-bounds": check_constant_bounds,
    "weak-convexity": check_weak_convexity,
    "prox-lemmas": check_prox_lemmas,
    "convergence": lambda seed: (check_convergence(seed=seed)
                                 + check_convergence(seed=seed, rho=0.0)),
}


def run_battery(names=None, seed=0):
    """Run the named checks (default: all) and return their reports.

    Raises if the claim coverage manifest has gaps.
    """
    gaps = coverage_gaps()
    if gaps:
        raise RuntimeError(f"claims without a registered check: {gaps}")
    if names is None:
        names = list(ALL_CHECKS)
    reports = []
    for name in names:
        if name not in ALL_CHECKS:
            raise KeyError(f"unknown check {name!r}; known: {sorted(ALL_CHECKS)}")
        reports.extend(ALL_CHECKS[name](seed))
    return reports
