"""Experiment harness: config parsing, run orchestration, artifacts, reports.

Subcommands:
  run     execute the configured runs (one per seed) and write artifacts
  verify  replay artifacts from config + seed and re-check every bound
  sweep   re-run at several horizon lengths and tabulate regret vs. bound

Artifacts per seed: a per-round CSV (fixed column schema), a summary JSON
(regret report, generalization report when the environment is stochastic,
config echo, resolved rates), and optionally a per-round policy log.  All
floats are serialized with 17 significant digits so that parsing them back
is bit-exact, which lets `verify` compare a deterministic replay against the
stored artifact field by field.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from . import benchmark, environments
from .auditor import Auditor, make_mahalanobis, make_random_nonmetric, similarity_from_table
from .core import Batch, HypothesisClass, RunConfig, Universe, default_gamma, default_penalty, default_q
from .environments import GeneralizationReport, ScriptedEnv, StochasticEnv, generalization_report
from .hypotheses import find_separator, make_table_class, make_threshold_class
from .learners import ConstantZeroLearner, ExpWeightsLearner, FtplLearner, RunTrace, default_omega, run_fair_online

CSV_HEADER = "t,err,unfair,lagrangian,audit_rho1,audit_rho2,cum_err,cum_unfair"


class ConfigError(Exception):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _section(cfg: dict, key: str, required: bool = True) -> dict:
    if key not in cfg:
        if required:
            raise ConfigError(f"{key}: missing required section")
        return {}
    if not isinstance(cfg[key], (dict, str)):
        raise ConfigError(f"{key}: must be an object")
    return cfg[key]


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    return cfg


def build_universe(cfg: dict) -> Universe:
    sec = _section(cfg, "universe")
    if "n" not in sec:
        raise ConfigError("universe.n: missing")
    features = np.asarray(sec["features"], dtype=float) if "features" in sec else None
    try:
        return Universe(int(sec["n"]), features)
    except ValueError as exc:
        raise ConfigError(f"universe: {exc}")


def build_class(cfg: dict, universe: Universe) -> HypothesisClass:
    sec = _section(cfg, "hypothesis_class")
    try:
        if "threshold" in sec:
            n = int(sec["threshold"])
            if n != universe.n:
                raise ConfigError("hypothesis_class.threshold: must equal universe.n")
            return make_threshold_class(n)
        if "table" in sec:
            hclass = make_table_class(sec["table"])
            if hclass.n != universe.n:
                raise ConfigError("hypothesis_class.table: row length must equal universe.n")
            return hclass
    except ValueError as exc:
        raise ConfigError(f"hypothesis_class: {exc}")
    raise ConfigError("hypothesis_class: expected 'threshold' or 'table'")


def build_similarity(cfg: dict, universe: Universe) -> np.ndarray:
    sec = _section(cfg, "similarity")
    try:
        if "table" in sec:
            d = similarity_from_table(sec["table"])
        elif "mahalanobis" in sec:
            if universe.features is None:
                raise ConfigError("similarity.mahalanobis: universe.features required")
            d = make_mahalanobis(universe.features, np.asarray(sec["mahalanobis"]["matrix"], dtype=float))
        elif "random" in sec:
            r = sec["random"]
            d = make_random_nonmetric(universe.n, int(r.get("seed", 0)), float(r.get("scale", 1.0)))
        else:
            raise ConfigError("similarity: expected 'table', 'mahalanobis', or 'random'")
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"similarity: {exc}")
    if d.shape[0] != universe.n:
        raise ConfigError("similarity: table size must equal universe.n")
    return d


def resolve_run_config(cfg: dict, hclass: HypothesisClass, seed: int) -> RunConfig:
    sec = _section(cfg, "run")
    for key in ("T", "k", "alpha_prime", "epsilon"):
        if key not in sec:
            raise ConfigError(f"run.{key}: missing")
    T = int(sec["T"])
    k = int(sec["k"])
    alpha_prime = float(sec["alpha_prime"])
    epsilon = float(sec["epsilon"])
    if not 0 < epsilon < alpha_prime:
        raise ConfigError("run.epsilon: must satisfy 0 < epsilon < alpha_prime")
    C = int(sec["C"]) if sec.get("C") is not None else default_penalty(k, epsilon)
    gamma = float(sec["gamma"]) if sec.get("gamma") is not None else default_gamma(hclass.size, T)
    omega = float(sec["omega"]) if sec.get("omega") is not None else None
    q = int(sec["q"]) if sec.get("q") is not None else default_q(T)
    run_config = RunConfig(
        T=T, k=k, alpha_prime=alpha_prime, epsilon=epsilon, C=C, gamma=gamma,
        delta=float(sec.get("delta", 0.05)), q=q, dummy_v=int(sec.get("dummy_v", 0)),
        seed=seed, omega=omega, bound_target=str(sec.get("bound_target", "fairness")),
    )
    try:
        run_config.validate(hclass.n)
    except ValueError as exc:
        raise ConfigError(f"run: {exc}")
    return run_config


def _learner_spec(cfg: dict):
    sec = cfg.get("learner", {"expweights": {}})
    if isinstance(sec, str):
        sec = {sec: {}}
    if not isinstance(sec, dict) or len(sec) != 1:
        raise ConfigError("learner: expected one of 'expweights', 'ftpl', 'constant_zero'")
    kind, opts = next(iter(sec.items()))
    if kind not in ("expweights", "ftpl", "constant_zero"):
        raise ConfigError(f"learner.{kind}: unknown learner")
    return kind, opts or {}


def build_learner(cfg: dict, hclass: HypothesisClass, run_config: RunConfig,
                  rng: np.random.Generator):
    """Returns (learner, kind, gamma, omega, separator_size)."""
    kind, opts = _learner_spec(cfg)
    if kind == "constant_zero":
        return ConstantZeroLearner(hclass), kind, None, None, None
    if kind == "expweights":
        gamma = float(opts["gamma"]) if opts.get("gamma") is not None else run_config.gamma
        learner = ExpWeightsLearner(hclass, gamma, loss_range=run_config.C + run_config.k)
        return learner, kind, gamma, None, None
    sep = find_separator(hclass)
    omega = run_config.omega
    if opts.get("omega") is not None:
        omega = float(opts["omega"])
    if omega is None:
        omega = default_omega(hclass.size, sep.size, run_config.k_prime, run_config.T,
                              run_config.C, run_config.k)
    learner = FtplLearner(
        hclass, sep, omega, rng, run_config.dummy_v, run_config.k_prime,
        mixture=bool(opts.get("mixture", False)),
        mixture_draws=int(opts.get("mixture_draws", 16)),
    )
    return learner, kind, None, omega, sep.size


def build_environment(cfg: dict, run_config: RunConfig, universe: Universe,
                      rng: np.random.Generator):
    """Returns (env, joint-or-None)."""
    sec = _section(cfg, "environment")
    if "stochastic" in sec:
        spec = sec["stochastic"]
        if "joint" in spec:
            joint = np.asarray(spec["joint"], dtype=float)
        elif "uniform_labels" in spec:
            probs = np.asarray(spec["uniform_labels"]["label_probs"], dtype=float)
            if probs.size != universe.n or probs.min() < 0 or probs.max() > 1:
                raise ConfigError("environment.stochastic.uniform_labels.label_probs: "
                                  "need one probability in [0,1] per instance")
            joint = np.stack([(1.0 - probs) / universe.n, probs / universe.n], axis=1)
        else:
            raise ConfigError("environment.stochastic: expected 'joint' or 'uniform_labels'")
        try:
            env = StochasticEnv(joint, run_config.k, rng)
        except ValueError as exc:
            raise ConfigError(f"environment.stochastic: {exc}")
        return env, joint
    if "scripted" in sec:
        spec = sec["scripted"]
        try:
            batches = [Batch(np.asarray(b["xs"]), np.asarray(b["ys"])) for b in spec["batches"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"environment.scripted.batches: {exc}")
        if len(batches) < run_config.T:
            raise ConfigError("environment.scripted: need at least T batches")
        if any(b.xs.max() >= universe.n for b in batches):
            raise ConfigError("environment.scripted: instance index outside universe")
        pairs = None
        if "pairs" in spec:
            pairs = [tuple(p) if p is not None else None for p in spec["pairs"]]
        return ScriptedEnv(batches, pairs), None
    raise ConfigError("environment: expected 'stochastic' or 'scripted'")


def execute_run(cfg: dict, seed: int):
    """Deterministically build all components from the config and run once.
    Returns (trace, joint-or-None)."""
    universe = build_universe(cfg)
    hclass = build_class(cfg, universe)
    similarity = build_similarity(cfg, universe)
    run_config = resolve_run_config(cfg, hclass, seed)
    env_rng, learner_rng, auditor_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    ]
    auditor_sec = cfg.get("auditor", {})
    try:
        auditor = Auditor(run_config.alpha_prime, similarity,
                          tie_break=auditor_sec.get("tie_break", "max-violation"),
                          rng=auditor_rng)
    except ValueError as exc:
        raise ConfigError(f"auditor: {exc}")
    learner, kind, gamma, omega, sep_size = build_learner(cfg, hclass, run_config, learner_rng)
    env, joint = build_environment(cfg, run_config, universe, env_rng)
    trace = run_fair_online(learner, env, auditor, hclass, run_config,
                            learner_kind=kind, gamma=gamma, omega=omega,
                            separator_size=sep_size)
    return trace, joint


def csv_rows(trace: RunTrace):
    rows = [CSV_HEADER]
    cum_err, cum_unfair = 0.0, 0
    for r in trace.records:
        cum_err += r.err
        cum_unfair += r.unfair
        r1, r2 = (r.audit if r.audit is not None else (-1, -1))
        rows.append(f"{r.t},{_fmt(r.err)},{r.unfair},{_fmt(r.lagrangian)},"
                    f"{r1},{r2},{_fmt(cum_err)},{cum_unfair}")
    return rows


def _summary(trace: RunTrace, cfg: dict, seed: int,
             report: benchmark.RegretReport, gen: Optional[GeneralizationReport]) -> dict:
    return {
        "seed": seed,
        "config": cfg,
        "universe_size": trace.hclass.n,
        "class_size": trace.hclass.size,
        "learner": trace.learner_kind,
        "environment": trace.env_kind,
        "C": trace.config.C,
        "k_prime": trace.config.k_prime,
        "gamma": trace.gamma,
        "omega": trace.omega,
        "separator_size": trace.separator_size,
        "regret_report": report.to_dict(),
        "generalization": gen.to_dict() if gen is not None else None,
    }


def _run_one(cfg: dict, seed: int, out_dir: str, log_policies: bool):
    trace, joint = execute_run(cfg, seed)
    report = benchmark.verify_bounds(trace)
    gen = generalization_report(trace, joint) if joint is not None else None

    csv_path = os.path.join(out_dir, f"run_seed{seed}.csv")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(csv_rows(trace)) + "\n")
    with open(os.path.join(out_dir, f"summary_seed{seed}.json"), "w") as fh:
        json.dump(_summary(trace, cfg, seed, report, gen), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if log_policies:
        m = trace.hclass.size
        header = "t," + ",".join(f"w{h}" for h in range(m))
        lines = [header]
        for r in trace.records:
            lines.append(f"{r.t}," + ",".join(_fmt(w) for w in r.policy.weights))
        with open(os.path.join(out_dir, f"policies_seed{seed}.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return seed, report.all_pass(), gen.all_pass() if gen is not None else None


def _pool_size(n_jobs: int) -> int:
    cap = os.environ.get("FAIRLAB_THREADS")
    if cap is not None:
        try:
            cap = int(cap)
        except ValueError:
            raise ConfigError("FAIRLAB_THREADS must be an integer")
        return max(1, min(cap, n_jobs))
    return max(1, min(4, os.cpu_count() or 1, n_jobs))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = [int(s) for s in args.seed] if args.seed else [int(s) for s in cfg.get("seeds", [0])]
    if not seeds:
        raise ConfigError("seeds: need at least one seed (config 'seeds' or --seed)")
    out_dir = args.out or cfg.get("output_dir", "artifacts")
    os.makedirs(out_dir, exist_ok=True)
    # validate eagerly so schema errors surface before any run starts
    universe = build_universe(cfg)
    hclass = build_class(cfg, universe)
    build_similarity(cfg, universe)
    resolve_run_config(cfg, hclass, seeds[0])
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")

    workers = _pool_size(len(seeds))
    results = []
    if workers == 1 or len(seeds) == 1:
        for s in seeds:
            results.append(_run_one(cfg, s, out_dir, args.log_policies))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, cfg, s, out_dir, args.log_policies) for s in seeds]
            results = [f.result() for f in futures]
    ok = True
    for seed, checks_ok, gen_ok in sorted(results):
        gen_txt = "" if gen_ok is None else f", generalization {'pass' if gen_ok else 'FAIL'}"
        print(f"[seed {seed}] bound checks {'pass' if checks_ok else 'FAIL'}{gen_txt}")
        ok = ok and checks_ok
    print(f"artifacts written to {out_dir}")
    return 0 if ok else 1


def _parse_csv(path: str, T: int):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path}: bad or missing header row")
    body = [ln for ln in lines[1:] if ln]
    if len(body) != T:
        raise ConfigError(f"{path}: expected {T} data rows, found {len(body)}")
    rows = []
    for i, ln in enumerate(body, start=2):
        parts = ln.split(",")
        if len(parts) != 8:
            raise ConfigError(f"{path}:{i}: expected 8 fields, found {len(parts)}")
        try:
            rows.append((int(parts[0]), float(parts[1]), int(parts[2]), float(parts[3]),
                         int(parts[4]), int(parts[5]), float(parts[6]), int(parts[7])))
        except ValueError as exc:
            raise ConfigError(f"{path}:{i}: {exc}")
    return rows


def _verify_seed(cfg: dict, seed: int, art_dir: str) -> bool:
    trace, joint = execute_run(cfg, seed)
    failures = []

    csv_path = os.path.join(art_dir, f"run_seed{seed}.csv")
    rows = _parse_csv(csv_path, trace.T)
    cum_err, cum_unfair = 0.0, 0
    for r, row in zip(trace.records, rows):
        cum_err += r.err
        cum_unfair += r.unfair
        r1, r2 = (r.audit if r.audit is not None else (-1, -1))
        want = (r.t, r.err, r.unfair, r.lagrangian, r1, r2, cum_err, cum_unfair)
        if row != want:
            failures.append(f"round {r.t}: stored row {row} != replayed {want}")
            break

    pol_path = os.path.join(art_dir, f"policies_seed{seed}.csv")
    if os.path.exists(pol_path):
        with open(pol_path) as fh:
            lines = fh.read().splitlines()
        for r, ln in zip(trace.records, lines[1:]):
            got = np.array([float(v) for v in ln.split(",")[1:]])
            if not np.array_equal(got, r.policy.weights):
                failures.append(f"round {r.t}: logged policy differs from replay")
                break

    report = benchmark.verify_bounds(trace)
    for check in report.bound_checks:
        status = "pass" if check.passed else "FAIL"
        lhs = "n/a" if check.lhs is None else f"{check.lhs:.6g}"
        print(f"  [{status}] {check.name}: {lhs} {check.relation} "
              f"{'n/a' if check.rhs is None else f'{check.rhs:.6g}'}")
        if not check.passed:
            failures.append(f"bound check failed: {check.name}")

    sum_path = os.path.join(art_dir, f"summary_seed{seed}.json")
    if not os.path.exists(sum_path):
        raise ConfigError(f"missing summary artifact {sum_path}")
    with open(sum_path) as fh:
        stored = json.load(fh)
    fresh = report.to_dict()
    stored_report = stored.get("regret_report", {})
    for key in ("misclass_regret", "lagrangian_regret_vs_qalpha",
                "lagrangian_regret_vs_simplex", "cumulative_unfair", "r_value"):
        val = stored_report.get(key)
        if val is None or abs(val - fresh[key]) > 1e-9:
            failures.append(f"summary field {key} not reproducible from trace")
    stored_checks = {c["name"]: c for c in stored_report.get("bound_checks", [])}
    for check in report.bound_checks:
        sc = stored_checks.get(check.name)
        if sc is None or bool(sc["pass"]) != check.passed:
            failures.append(f"summary bound check {check.name} not reproducible")

    if joint is not None:
        gen = generalization_report(trace, joint)
        stored_gen = stored.get("generalization") or {}
        stored_flags = {c["name"]: bool(c["pass"]) for c in stored_gen.get("checks", [])}
        for check in gen.checks:
            status = "pass" if check.passed else "miss"
            print(f"  [{status}] {check.name} (probabilistic, non-gating): "
                  f"{check.lhs:.6g} {check.relation} {check.rhs:.6g}")
            if stored_flags.get(check.name) != check.passed:
                failures.append(f"generalization check {check.name} not reproducible")

    for msg in failures:
        print(f"  ERROR: {msg}")
    return not failures


def cmd_verify(args) -> int:
    cfg_path = os.path.join(args.artifact_dir, "config.json")
    if not os.path.exists(cfg_path):
        raise ConfigError(f"missing config echo {cfg_path}")
    cfg = load_config(cfg_path)
    seeds = []
    for name in sorted(os.listdir(args.artifact_dir)):
        if name.startswith("run_seed") and name.endswith(".csv"):
            seeds.append(int(name[len("run_seed"):-len(".csv")]))
    if not seeds:
        raise ConfigError(f"no run artifacts found in {args.artifact_dir}")
    ok = True
    for seed in sorted(seeds):
        print(f"[seed {seed}]")
        ok = _verify_seed(cfg, seed, args.artifact_dir) and ok
    print("verification " + ("passed" if ok else "FAILED"))
    return 0 if ok else 1


def _theoretical_bound(trace: RunTrace) -> Optional[float]:
    cfg = trace.config
    m = trace.hclass.size
    if trace.learner_kind == "expweights":
        return 2.0 * (cfg.C + cfg.k) * math.sqrt(math.log(m) * cfg.T)
    if trace.learner_kind == "ftpl":
        s = max(1, trace.separator_size or 1)
        return 14.0 * ((s * cfg.k) / cfg.epsilon) ** 0.75 * math.sqrt(cfg.T * math.log(m))
    return None


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    t_values = [int(t) for t in args.T] if args.T else []
    seeds = cfg.get("seeds", [0])
    seed = int(args.seed[0]) if args.seed else int(seeds[0])
    lines = ["T,cum_unfair,misclass_regret,bound"]
    for T in t_values:
        sweep_cfg = json.loads(json.dumps(cfg))
        sweep_cfg.setdefault("run", {})["T"] = T
        sweep_cfg["run"]["q"] = None  # re-derive for each horizon
        trace, _ = execute_run(sweep_cfg, seed)
        fair = benchmark.best_fair_policy(trace.hclass, [r.batch for r in trace.records],
                                          trace.similarity, trace.config.alpha)
        regret = float(trace.errs().sum()) - fair.objective
        bound = _theoretical_bound(trace)
        lines.append(f"{T},{int(trace.unfairs().sum())},{_fmt(regret)},"
                     f"{'' if bound is None else _fmt(bound)}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table + "\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fairlab",
        description="Online classification under an individual-fairness auditor",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute configured runs and write artifacts")
    p_run.add_argument("config")
    p_run.add_argument("--seed", action="append", help="override config seeds (repeatable)")
    p_run.add_argument("--out", help="artifact directory (default from config)")
    p_run.add_argument("--log-policies", action="store_true",
                       help="also write per-round policy weights")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="replay artifacts and re-check all bounds")
    p_verify.add_argument("artifact_dir")
    p_verify.set_defaults(func=cmd_verify)

    p_sweep = sub.add_parser("sweep", help="run at several horizons, tabulate regret vs bound")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--T", action="append", help="horizon (repeatable)")
    p_sweep.add_argument("--seed", action="append", help="seed override")
    p_sweep.add_argument("--out", help="write the table to this file as well")
    p_sweep.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
