import json

import pytest

from robust_align.cli import (
    EXIT_CHECK_FAILURE,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    main,
    read_trace_csv,
)


def base_config():
    return {
        "version": 1,
        "environment": {"random": {"seed": 41, "n_prompts": 2,
                                   "n_responses": 3, "dim": 2,
                                   "target_b_psi": 1.0}},
        "oracle": {"random": {"seed": 42, "n_prompts": 2, "n_responses": 3}},
        "policy": {"theta_ref": [0.0, 0.0], "radius_d": 1.0,
                   "theta0": [0.3, -0.2]},
        "hyperparams": {"beta": 1.0, "rho": 0.03, "eta": "auto",
                        "horizon_t": 40, "batch_b": 4, "lambda_env": "auto"},
        "seeds": [0, 1],
        "eps_prox": 1e-5,
    }


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base_config()))
    return str(path)


def test_missing_config_is_a_config_error(tmp_path):
    assert main(["constants", "--out-dir", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_bad_version_is_a_config_error(tmp_path):
    doc = base_config()
    doc["version"] = 99
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["constants", "--config", str(p),
                 "--out-dir", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_inadmissible_rho_is_a_config_error(tmp_path):
    doc = base_config()
    doc["hyperparams"]["rho"] = 0.49  # above the oracle margin
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["constants", "--config", str(p),
                 "--out-dir", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_decompose_check_emits_json(tmp_path):
    rc = main(["decompose-check", "--instances", "20", "--seed", "3",
               "--out-dir", str(tmp_path), "--quiet"])
    assert rc == EXIT_OK
    doc = json.loads((tmp_path / "decompose_check.json").read_text())
    assert len(doc["instances"]) == 20
    assert doc["max_abs_diff"] <= 1e-10
    assert {"lhs", "rhs", "abs_diff"} <= set(doc["instances"][0])
    assert "config_digest" in doc and "artifact_version" in doc


def test_constants_emits_full_bundle(tmp_path, config_path):
    rc = main(["constants", "--config", config_path,
               "--out-dir", str(tmp_path), "--quiet"])
    assert rc == EXIT_OK
    doc = json.loads((tmp_path / "constants.json").read_text())
    for key in ("b_psi", "kappa_r", "kappa", "lambda_env", "l_env",
                "g_grad_sail", "g_sub_r", "g_tot2", "f_inf"):
        assert key in doc
    assert 0.0 < doc["lambda_env"] < 1.0 / doc["kappa"]


def test_train_then_envelope_pipeline(tmp_path, config_path):
    trace = tmp_path / "trace.csv"
    rc = main(["train", "--config", config_path, "--seed", "0",
               "--out", str(trace), "--out-dir", str(tmp_path), "--quiet"])
    assert rc == EXIT_OK
    thetas, meta = read_trace_csv(trace)
    assert thetas.shape == (41, 2)
    assert meta["seed"] == "0"
    rc = main(["envelope", "--config", config_path, "--trace", str(trace),
               "--eps-prox", "1e-5", "--out", str(tmp_path / "env.csv"),
               "--out-dir", str(tmp_path), "--quiet"])
    assert rc == EXIT_OK
    summary = json.loads((tmp_path / "env.summary.json").read_text())
    assert summary["trajectory_mean_sq_env_grad"] > 0
    assert summary["max_residual"] <= 1e-5
    lines = (tmp_path / "env.csv").read_text().splitlines()
    assert lines[1] == "t,env_grad_norm"
    assert len(lines) == 2 + 41


def test_train_reruns_are_byte_identical(tmp_path, config_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    for out in (a, b):
        rc = main(["train", "--config", config_path, "--seed", "5",
                   "--log-exact-loss", "--out", str(out),
                   "--out-dir", str(tmp_path), "--quiet"])
        assert rc == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_verify_subset(tmp_path):
    rc = main(["verify", "--check", "decomposition", "--check",
               "counterexample", "--out", str(tmp_path / "v.json"),
               "--out-dir", str(tmp_path), "--quiet"])
    assert rc == EXIT_OK
    doc = json.loads((tmp_path / "v.json").read_text())
    assert doc["all_passed"]
    assert len(doc["checks"]) == 2
    assert "claims" in doc


def test_verify_rejects_unknown_check(tmp_path):
    rc = main(["verify", "--check", "bogus", "--out-dir", str(tmp_path),
               "--quiet"])
    assert rc == EXIT_CONFIG_ERROR


def test_sweep_rho_affine_in_rho(tmp_path, config_path):
    rc = main(["sweep-rho", "--config", config_path, "--rhos",
               "0,0.01,0.02,0.05", "--probes", "3",
               "--out", str(tmp_path / "sweep.csv"),
               "--out-dir", str(tmp_path), "--quiet"])
    assert rc == EXIT_OK
    summary = json.loads((tmp_path / "sweep.summary.json").read_text())
    assert summary["max_affine_residual"] <= 1e-10
    assert summary["max_zero_rho_gap"] <= 1e-12
    assert summary["max_monotonicity_violation"] <= 1e-15


def test_run_emits_three_artifact_kinds(tmp_path, config_path):
    rc = main(["run", "--config", config_path, "--out-dir", str(tmp_path),
               "--quiet"])
    assert rc == EXIT_OK
    for seed in (0, 1):
        assert (tmp_path / f"trace_seed{seed}.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seeds"] == [0, 1]
    assert summary["eta"] > 0
    assert summary["corollary_bound"] > 0
    assert len(summary["per_seed_mean_sq_env_grad"]) == 2
    plot = (tmp_path / "plot_data.csv").read_text().splitlines()
    assert plot[1] == "t,mean_sq_env_grad"
    header = (tmp_path / "trace_seed0.csv").read_text().splitlines()[0]
    assert header.startswith("# config_digest=")
    assert "artifact_version=1" in header


def test_run_is_deterministic_across_invocations(tmp_path, config_path):
    for d in ("one", "two"):
        rc = main(["run", "--config", config_path,
                   "--out-dir", str(tmp_path / d), "--quiet"])
        assert rc == EXIT_OK
    for name in ("trace_seed0.csv", "trace_seed1.csv", "plot_data.csv"):
        assert (tmp_path / "one" / name).read_bytes() == \
            (tmp_path / "two" / name).read_bytes()
