"""Acceptance battery: one test per top-level guarantee, each ending with a
single PASS/FAIL line. Run with -s to see the lines on success."""

import json
import time

import numpy as np
import pytest

from robust_align.cli import main as cli_main
from robust_align.environment import random_environment
from robust_align.numdiff import fd_gradient
from robust_align.objective import ExactEvaluator
from robust_align.optimizer import penalty_subgrad_samples, sail_grad_samples, sample_batch
from robust_align.oracle import pointwise_sup_value
from robust_align.verification import (
    benchmark_instance,
    check_constant_bounds,
    check_convergence,
    check_counterexample,
    check_decomposition,
    check_prox_lemmas,
    check_weak_convexity,
    random_instance,
)


def _line(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:2d}] {status} - {detail}")
    assert ok, detail


def test_criterion_01_decomposition_identity():
    start = time.monotonic()
    report = check_decomposition(seed=0, n_instances=100)
    elapsed = time.monotonic() - start
    ok = report.passed and elapsed < 10.0
    _line(1, ok, f"max |worst-case - closed form| = {report.measured:.3e} "
                 f"(tol 1e-10), {elapsed:.2f}s")


def test_criterion_02_counterexample_closed_forms():
    report = check_counterexample()
    _line(2, report.passed,
          f"1-D penalty matches closed forms to {report.measured:.3e} "
          f"(tol 1e-12), midpoint-convexity gap positive")


def test_criterion_03_pointwise_supremum_vs_grid():
    rng = np.random.default_rng(30)
    grid = np.linspace(0.0, 1.0, 100_000)
    worst = 0.0
    for _ in range(1000):
        p_star = rng.uniform(0.05, 0.95)
        rho = rng.uniform(0.0, min(p_star, 1.0 - p_star))
        a, b = rng.uniform(-3.0, 3.0, size=2)
        closed = pointwise_sup_value(p_star, rho, a, b)
        ps = (p_star - rho) + 2.0 * rho * grid
        grid_max = float(np.max(ps * a + (1.0 - ps) * b))
        gap = abs(closed - grid_max)
        tol = 2e-5 * abs(a - b) + 1e-14
        worst = max(worst, gap - tol)
    _line(3, worst <= 0.0,
          f"closed-form sup within grid resolution on 1000 draws "
          f"(worst slack violation {worst:.3e})")


def test_criterion_04_gradient_exactness():
    rng = np.random.default_rng(40)
    eps = 1e-6
    worst = 0.0
    for _ in range(4):
        env, oracle, params, cfg, hyper = random_instance(rng)
        ev = ExactEvaluator(env, oracle, hyper, params.theta_ref)
        dpsi_norms = np.linalg.norm(ev._dpsi, axis=1)
        active = dpsi_norms > 1e-12
        done = 0
        while done < 50:
            u = rng.standard_normal(params.theta.size)
            u *= rng.uniform(0.0, params.radius_d) / np.linalg.norm(u)
            theta = params.theta_ref + u
            _, _, s, _ = ev.policy_tables(theta)
            if active.any() and np.abs(s[active]).min() < 1e-3:
                continue  # keep the smoothed penalty away from its kinks
            done += 1
            exact = ev.sail_grad(theta)
            fd = fd_gradient(ev.sail_loss, theta)
            worst = max(worst, np.linalg.norm(fd - exact)
                        / max(1.0, np.linalg.norm(exact)))
            exact_r = ev.penalty_grad_smoothed(theta, eps)
            fd_r = fd_gradient(lambda th: ev.penalty_smoothed(th, eps), theta)
            worst = max(worst, np.linalg.norm(fd_r - exact_r)
                        / max(1.0, np.linalg.norm(exact_r)))
    _line(4, worst <= 1e-5,
          f"exact gradients vs central differences, worst relative error "
          f"{worst:.3e} (tol 1e-5)")


def test_criterion_05_estimator_unbiasedness():
    env, oracle, params, cfg, hyper = benchmark_instance()
    n = 100_000
    rng = np.random.default_rng(50)
    batch = sample_batch(env, params, oracle, cfg, hyper, rng, n)
    g_sail = sail_grad_samples(env, params, hyper, batch)
    g_pen = penalty_subgrad_samples(env, params, hyper, batch)
    ev = ExactEvaluator(env, oracle, hyper, params.theta_ref)
    failures = 0
    worst_sigma = 0.0
    for samples, exact in ((g_sail, ev.sail_grad(params.theta)),
                           (g_pen, ev.penalty_subgrad(params.theta))):
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(n)
        zscores = np.abs(mean - exact) / se
        worst_sigma = max(worst_sigma, float(zscores.max()))
        failures += int(np.sum(zscores > 4.0))
    _line(5, failures == 0,
          f"batch means within 4 standard errors on every coordinate "
          f"(worst {worst_sigma:.2f} sigma over {n} samples)")


def test_criterion_06_constant_bounds():
    reports = check_constant_bounds(seed=0, n_probes=200)
    ok = all(r.passed for r in reports)
    detail = ", ".join(f"{r.name.split('/')[-1]}={r.measured:.3g}<={r.bound:.3g}"
                       for r in reports)
    _line(6, ok, f"zero violations over 200 probes per bound ({detail})")


def test_criterion_07_weak_convexity():
    reports = check_weak_convexity(seed=0, n_pairs=500)
    ok = all(r.passed for r in reports)
    _line(7, ok, "secant inequalities on 500 triples and smoothed-Hessian "
                 "eigenvalue floors at eps in {1e-2, 1e-4}")


def test_criterion_08_envelope_machinery():
    reports = check_prox_lemmas(seed=0)
    ok = all(r.passed for r in reports)
    names = {r.name.split("/")[-1] for r in reports}
    required = {"residual_identity", "envelope_lipschitz",
                "certificate_eps1e-05", "certificate_eps1e-08",
                "absolute_value_instance"}
    ok = ok and required <= names
    _line(8, ok, "residual identity, envelope Lipschitz bound, inexact-prox "
                 "certificates, and the 1-D absolute-value instance")


def test_criterion_09_convergence_benchmark():
    start = time.monotonic()
    reports = check_convergence(seed=0) + check_convergence(seed=0, rho=0.0)
    elapsed = time.monotonic() - start
    ok = all(r.passed for r in reports) and elapsed < 300.0
    _line(9, ok, f"seed-averaged envelope gradient under the tuned-rate bound "
                 f"at T in {{200, 800, 3200}}, both radii, {elapsed:.1f}s")


def test_criterion_10_determinism(tmp_path):
    env = random_environment(41, 2, 3, 2, target_b_psi=1.0)
    config = {
        "version": 1,
        "environment": env.to_json_dict(),
        "oracle": {"random": {"seed": 42, "n_prompts": 2, "n_responses": 3}},
        "policy": {"theta_ref": [0.0, 0.0], "radius_d": 1.0,
                   "theta0": [0.3, -0.2]},
        "hyperparams": {"beta": 1.0, "rho": 0.03, "eta": "auto",
                        "horizon_t": 50, "batch_b": 4, "lambda_env": "auto"},
        "seeds": [0],
        "eps_prox": 1e-5,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    for d in ("one", "two"):
        rc = cli_main(["run", "--config", str(cfg_path),
                       "--out-dir", str(tmp_path / d), "--quiet"])
        assert rc == 0
    same = ((tmp_path / "one" / "trace_seed0.csv").read_bytes()
            == (tmp_path / "two" / "trace_seed0.csv").read_bytes())
    _line(10, same, "identical config+seed produces byte-identical trace CSVs")
