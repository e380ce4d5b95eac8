"""Command-line experiment harness.

Subcommands: decompose-check, constants, train, envelope, verify, sweep-rho,
run. Config is JSON with an explicit "version" field; every output artifact
embeds the config digest, seed, artifact version, and claims-manifest version.
All outputs are deterministic given (config, seed): reruns produce
byte-identical files. Wall-clock timing columns are opt-in (--timing) so the
default artifacts stay reproducible.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .envelope import envelope_grad_along_trace, prox_solve
from .environment import environment_from_json, random_environment
from .errors import ConfigInvalid, RobustAlignError
from .objective import ExactEvaluator, Hyperparams, constants_bundle
from .optimizer import RunTrace, corollary_bound, corollary_stepsize, rate_bound, rscgd_run
from .oracle import UncertaintyConfig, oracle_from_json, random_oracle
from .policy import PolicyParams
from .verification import ALL_CHECKS, CLAIMS, run_battery

ARTIFACT_VERSION = 1
CLAIMS_MANIFEST_VERSION = 1
CONFIG_VERSION = 1

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def _fmt(x):
    """Shortest round-trip decimal form; deterministic across runs."""
    return repr(float(x))


def config_digest(doc):
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


# -- config ----------------------------------------------------------------


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigInvalid(
            f"config field 'version' must be {CONFIG_VERSION}, got {doc.get('version')!r}")
    return doc


def _build_environment(spec):
    if "file" in spec:
        with open(spec["file"]) as fh:
            return environment_from_json(json.load(fh))
    if "random" in spec:
        r = spec["random"]
        return random_environment(int(r["seed"]), int(r["n_prompts"]),
                                  int(r["n_responses"]), int(r["dim"]),
                                  target_b_psi=r.get("target_b_psi"))
    if "prompts" in spec:
        return environment_from_json(spec)
    raise ConfigInvalid("environment must give 'file', 'random', or inline fields")


def _build_oracle(spec):
    if "file" in spec:
        with open(spec["file"]) as fh:
            return oracle_from_json(json.load(fh))
    if "random" in spec:
        r = spec["random"]
        return random_oracle(int(r["seed"]), int(r["n_prompts"]),
                             int(r["n_responses"]),
                             reward_scale=float(r.get("reward_scale", 1.0)))
    if "reward" in spec:
        return oracle_from_json(spec)
    raise ConfigInvalid("oracle must give 'file', 'random', or a 'reward' table")


class Problem:
    """Everything a run needs, decoded and validated from one config."""

    def __init__(self, doc):
        try:
            self.env = _build_environment(doc["environment"])
            self.oracle = _build_oracle(doc["oracle"])
            pol = doc["policy"]
            theta_ref = np.asarray(pol["theta_ref"], dtype=float)
            theta0 = np.asarray(pol.get("theta0", pol["theta_ref"]), dtype=float)
            self.params = PolicyParams(theta=theta0, theta_ref=theta_ref,
                                       radius_d=float(pol["radius_d"]))
            hp = doc["hyperparams"]
            self.eta_auto = hp.get("eta", "auto") == "auto"
            lam_env = hp.get("lambda_env", "auto")
            self.hyper = Hyperparams(
                beta=float(hp["beta"]),
                rho=float(hp["rho"]),
                eps_smooth=float(hp.get("eps_smooth", 1e-8)),
                eta=None if self.eta_auto else float(hp["eta"]),
                horizon_t=int(hp.get("horizon_t", 100)),
                batch_b=int(hp.get("batch_b", 8)),
                lambda_env=None if lam_env == "auto" else float(lam_env),
            )
            self.seeds = [int(s) for s in doc.get("seeds", [0])]
            self.oracle_mode = doc.get("oracle_mode", "true")
            self.eps_prox = float(doc.get("eps_prox", 1e-5))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad config field: {exc}") from exc
        self.cfg = UncertaintyConfig(self.hyper.rho)
        try:
            self.cfg.check_admissible(self.oracle)
        except RobustAlignError as exc:
            raise ConfigInvalid(f"hyperparams.rho: {exc}") from exc
        self.digest = config_digest(doc)

    def bundle(self, seed=0):
        return constants_bundle(self.env, self.params, self.oracle, self.hyper,
                                seed=seed)

    def resolve_eta(self, bundle):
        """Fill in the horizon-tuned stepsize; needs one prox solve at theta0."""
        if not self.eta_auto:
            return self.hyper, None
        res = prox_solve(self.env, self.oracle, self.cfg, self.hyper, bundle,
                         self.params, self.params.theta, eps_prox=1e-8)
        eta = corollary_stepsize(bundle, self.hyper, res.env_value)
        return self.hyper.replace(eta=eta), res.env_value


# -- artifact emission -----------------------------------------------------


def _artifact_header(digest, seed):
    return (f"# config_digest={digest} seed={seed} "
            f"artifact_version={ARTIFACT_VERSION} "
            f"claims_manifest_version={CLAIMS_MANIFEST_VERSION}\n")


def write_trace_csv(path, trace: RunTrace, digest, timing_ns=None):
    buf = io.StringIO()
    buf.write(_artifact_header(digest, trace.seed))
    cols = ["t", "theta"]
    if trace.losses is not None:
        cols.append("exact_loss")
    cols.append("env_grad_norm")
    if timing_ns is not None:
        cols.append("wall_ns")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for t in range(trace.thetas.shape[0]):
        row = [str(t), json.dumps([_fmt(v) for v in trace.thetas[t]])]
        if trace.losses is not None:
            row.append(_fmt(trace.losses[t]))
        if trace.env_grad_norms is not None:
            row.append(_fmt(trace.env_grad_norms[t]))
        else:
            row.append("")
        if timing_ns is not None:
            row.append(str(int(timing_ns)))
        writer.writerow(row)
    Path(path).write_text(buf.getvalue())


def read_trace_csv(path):
    """Thetas and metadata back from a trace CSV."""
    lines = Path(path).read_text().splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        for part in lines[0][1:].split():
            k, _, v = part.partition("=")
            meta[k] = v
        lines = lines[1:]
    rows = list(csv.reader(lines))
    header, rows = rows[0], rows[1:]
    t_idx = header.index("theta")
    thetas = np.array([[float(v) for v in json.loads(r[t_idx])] for r in rows])
    return thetas, meta


def write_json(path, doc, digest, seed=None):
    doc = dict(doc)
    doc["config_digest"] = digest
    doc["artifact_version"] = ARTIFACT_VERSION
    doc["claims_manifest_version"] = CLAIMS_MANIFEST_VERSION
    if seed is not None:
        doc["seed"] = seed
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- subcommands -----------------------------------------------------------


def cmd_decompose_check(args):
    from .verification import random_instance

    rng = np.random.default_rng(args.seed)
    records = []
    worst = 0.0
    for _ in range(args.instances):
        env, oracle, params, cfg, hyper = random_instance(rng)
        ev = ExactEvaluator(env, oracle, hyper, params.theta_ref)
        lhs = ev.robust_worstcase(params.theta)
        rhs = ev.robust_closed_form(params.theta)
        worst = max(worst, abs(lhs - rhs))
        records.append({"lhs": lhs, "rhs": rhs, "abs_diff": abs(lhs - rhs)})
    out = {"instances": records, "max_abs_diff": worst, "tolerance": 1e-10}
    path = Path(args.out_dir) / "decompose_check.json"
    write_json(path, out, config_digest({"seed": args.seed,
                                         "instances": args.instances}),
               seed=args.seed)
    if not args.quiet:
        print(f"max |lhs - rhs| = {worst:.3e} over {args.instances} instances")
    return EXIT_OK if worst <= 1e-10 else EXIT_CHECK_FAILURE


def cmd_constants(args):
    problem = Problem(load_config(args.config))
    bundle = problem.bundle(seed=args.seed)
    path = Path(args.out_dir) / "constants.json"
    write_json(path, bundle.to_json_dict(), problem.digest, seed=args.seed)
    if not args.quiet:
        print(json.dumps(bundle.to_json_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _train_one(problem, hyper, seed, oracle_mode, log_exact_loss):
    return rscgd_run(problem.env, problem.oracle, problem.cfg, hyper,
                     problem.params, seed=seed, oracle_mode=oracle_mode,
                     log_exact_loss=log_exact_loss)


def cmd_train(args):
    problem = Problem(load_config(args.config))
    bundle = problem.bundle()
    hyper, _ = problem.resolve_eta(bundle)
    seed = args.seed if args.seed is not None else problem.seeds[0]
    mode = args.oracle_mode or problem.oracle_mode
    trace = _train_one(problem, hyper, seed, mode, args.log_exact_loss)
    out = args.out or str(Path(args.out_dir) / f"trace_seed{seed}.csv")
    write_trace_csv(out, trace, problem.digest)
    if not args.quiet:
        print(f"wrote {out} ({trace.horizon} steps, eta={hyper.eta:.6g})")
    return EXIT_OK


def cmd_envelope(args):
    problem = Problem(load_config(args.config))
    bundle = problem.bundle()
    hyper, _ = problem.resolve_eta(bundle)
    thetas, meta = read_trace_csv(args.trace)
    seed = int(meta.get("seed", 0))
    trace = RunTrace(thetas=thetas, output_index=0, seed=seed,
                     oracle_mode=problem.oracle_mode)
    eps_prox = args.eps_prox if args.eps_prox is not None else problem.eps_prox
    trace, summary = envelope_grad_along_trace(
        problem.env, problem.oracle, problem.cfg, hyper, bundle,
        problem.params, trace, eps_prox=eps_prox)
    out = args.out or str(Path(args.out_dir) / "envelope.csv")
    buf = io.StringIO()
    buf.write(_artifact_header(problem.digest, seed))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "env_grad_norm"])
    for t, v in enumerate(trace.env_grad_norms):
        writer.writerow([str(t), _fmt(v)])
    Path(out).write_text(buf.getvalue())
    write_json(Path(out).with_suffix(".summary.json"), summary, problem.digest,
               seed=seed)
    if not args.quiet:
        print(f"trajectory mean ||env grad||^2 = "
              f"{summary['trajectory_mean_sq_env_grad']:.6g} "
              f"(bound {summary['corollary_bound']:.6g})")
    return EXIT_OK


def cmd_verify(args):
    names = args.check if args.check else None
    try:
        reports = run_battery(names, seed=args.seed)
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    doc = {
        "claims": CLAIMS,
        "checks": [r.to_json_dict() for r in reports],
        "all_passed": all(r.passed for r in reports),
    }
    out = args.out or str(Path(args.out_dir) / "verify.json")
    write_json(out, doc, config_digest({"checks": names or sorted(ALL_CHECKS),
                                        "seed": args.seed}), seed=args.seed)
    if not args.quiet:
        for r in reports:
            mark = "PASS" if r.passed else "FAIL"
            print(f"{mark} {r.name}: measured={r.measured:.6g} "
                  f"bound={r.bound:.6g} slack={r.slack:.3g}")
    return EXIT_OK if doc["all_passed"] else EXIT_CHECK_FAILURE


def cmd_sweep_rho(args):
    doc = load_config(args.config)
    problem = Problem(doc)
    if args.rhos:
        rho_list = [float(r) for r in args.rhos.split(",")]
    else:
        rho_list = [float(r) for r in doc.get("rho_list", [0.0, 0.01, 0.02, 0.05])]
    for rho in rho_list:
        UncertaintyConfig(rho).check_admissible(problem.oracle)
    rng = np.random.default_rng(args.seed)
    probes = [problem.params.theta]
    for _ in range(args.probes - 1):
        u = rng.standard_normal(problem.params.theta.size)
        u *= rng.uniform(0.0, problem.params.radius_d) / np.linalg.norm(u)
        probes.append(problem.params.theta_ref + u)

    buf = io.StringIO()
    buf.write(_artifact_header(problem.digest, args.seed))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["probe", "rho", "sail_loss", "penalty", "robust"])
    worst_affine = 0.0
    worst_zero = 0.0
    worst_mono = 0.0
    beta = problem.hyper.beta
    for i, theta in enumerate(probes):
        rows = []
        for rho in sorted(set(rho_list) | {0.0}):
            hyper = problem.hyper.replace(rho=rho)
            ev = ExactEvaluator(problem.env, problem.oracle, hyper,
                                problem.params.theta_ref)
            sail = ev.sail_loss(theta)
            pen = ev.penalty(theta)
            robust = ev.robust_worstcase(theta)
            rows.append((rho, sail, pen, robust))
            writer.writerow([str(i), _fmt(rho), _fmt(sail), _fmt(pen),
                             _fmt(robust)])
        rhos = np.array([r[0] for r in rows])
        robusts = np.array([r[3] for r in rows])
        design = np.stack([np.ones_like(rhos), rhos], axis=1)
        coef, *_ = np.linalg.lstsq(design, robusts, rcond=None)
        fit_resid = float(np.abs(design @ coef - robusts).max())
        slope_err = abs(coef[1] - beta * rows[0][2])
        worst_affine = max(worst_affine, fit_resid, slope_err)
        worst_zero = max(worst_zero, abs(rows[0][3] - rows[0][1]))
        worst_mono = max(worst_mono,
                         float(np.max(np.diff(robusts) * -1.0, initial=0.0)))
    out = args.out or str(Path(args.out_dir) / "sweep_rho.csv")
    Path(out).write_text(buf.getvalue())
    summary = {
        "rho_list": sorted(set(rho_list) | {0.0}),
        "max_affine_residual": worst_affine,
        "max_zero_rho_gap": worst_zero,
        "max_monotonicity_violation": worst_mono,
    }
    write_json(Path(out).with_suffix(".summary.json"), summary, problem.digest,
               seed=args.seed)
    ok = worst_affine <= 1e-10 and worst_zero <= 1e-12 and worst_mono <= 1e-15
    if not args.quiet:
        print(f"affine residual {worst_affine:.3e}, zero-rho gap "
              f"{worst_zero:.3e}, monotonicity violation {worst_mono:.3e}")
    return EXIT_OK if ok else EXIT_CHECK_FAILURE


def cmd_run(args):
    problem = Problem(load_config(args.config))
    bundle = problem.bundle()
    hyper, f_env0 = problem.resolve_eta(bundle)
    if f_env0 is None:
        res = prox_solve(problem.env, problem.oracle, problem.cfg, hyper,
                         bundle, problem.params, problem.params.theta,
                         eps_prox=1e-8)
        f_env0 = res.env_value
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one_seed(seed):
        trace = _train_one(problem, hyper, seed, problem.oracle_mode,
                           log_exact_loss=args.log_exact_loss)
        trace, summary = envelope_grad_along_trace(
            problem.env, problem.oracle, problem.cfg, hyper, bundle,
            problem.params, trace, eps_prox=problem.eps_prox)
        return trace, summary

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one_seed, problem.seeds))
    else:
        results = [one_seed(s) for s in problem.seeds]

    mean_sqs = []
    for seed, (trace, summary) in zip(problem.seeds, results):
        write_trace_csv(out_dir / f"trace_seed{seed}.csv", trace, problem.digest)
        mean_sqs.append(summary["trajectory_mean_sq_env_grad"])
    horizon = hyper.horizon_t
    summary = {
        "seeds": problem.seeds,
        "horizon_t": horizon,
        "eta": hyper.eta,
        "per_seed_mean_sq_env_grad": mean_sqs,
        "seed_mean_sq_env_grad": float(np.mean(mean_sqs)),
        "corollary_bound": corollary_bound(bundle, horizon, f_env0),
        "rate_bound": rate_bound(bundle, hyper.eta, horizon, f_env0),
        "f_env_theta0": f_env0,
        "constants": bundle.to_json_dict(),
    }
    write_json(out_dir / "summary.json", summary, problem.digest)

    # plot data: iteration vs seed-mean squared envelope gradient norm
    norms = np.stack([trace.env_grad_norms for trace, _ in results])
    mean_sq_by_t = (norms**2).mean(axis=0)
    buf = io.StringIO()
    buf.write(_artifact_header(problem.digest, "all"))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "mean_sq_env_grad"])
    for t, v in enumerate(mean_sq_by_t):
        writer.writerow([str(t), _fmt(v)])
    (out_dir / "plot_data.csv").write_text(buf.getvalue())
    if not args.quiet:
        print(f"seed-mean ||env grad||^2 = {summary['seed_mean_sq_env_grad']:.6g}"
              f" (corollary bound {summary['corollary_bound']:.6g})")
    return EXIT_OK


# -- dispatch --------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to JSON experiment config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(
        prog="robust-align",
        description="Oracle-robust preference alignment on finite spaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose-check", parents=[common],
                       help="verify the worst-case/penalty decomposition")
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=cmd_decompose_check, needs_config=False, seed_default=0)

    p = sub.add_parser("constants", parents=[common],
                       help="emit the constants bundle as JSON")
    p.set_defaults(func=cmd_constants, needs_config=True, seed_default=0)

    p = sub.add_parser("train", parents=[common], help="run one training seed")
    p.add_argument("--oracle-mode", choices=["true", "adversarial"])
    p.add_argument("--log-exact-loss", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train, needs_config=True, seed_default=None)

    p = sub.add_parser("envelope", parents=[common],
                       help="envelope gradient norms along a saved trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--eps-prox", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_envelope, needs_config=True, seed_default=0)

    p = sub.add_parser("verify", parents=[common],
                       help="run the executable claim battery")
    p.add_argument("--check", action="append",
                   help=f"one of {sorted(ALL_CHECKS)}; repeatable")
    p.add_argument("--all", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify, needs_config=False, seed_default=0)

    p = sub.add_parser("sweep-rho", parents=[common],
                       help="exact values across a grid of uncertainty radii")
    p.add_argument("--rhos", help="comma-separated radii")
    p.add_argument("--probes", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_rho, needs_config=True, seed_default=0)

    p = sub.add_parser("run", parents=[common],
                       help="full pipeline: train, envelope, summary")
    p.add_argument("--log-exact-loss", action="store_true")
    p.set_defaults(func=cmd_run, needs_config=True, seed_default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None and args.seed_default is not None:
        args.seed = args.seed_default
    if args.needs_config and not args.config:
        print("error: --config is required for this subcommand", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except RobustAlignError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
