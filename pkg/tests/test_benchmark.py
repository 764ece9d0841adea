import dataclasses

import numpy as np
import pytest

from fairlab import (
    Auditor,
    Batch,
    ConstantZeroLearner,
    ExpWeightsLearner,
    Policy,
    RunConfig,
    StochasticEnv,
    batch_err,
    best_fair_lagrangian_policy,
    best_fair_policy,
    best_lagrangian_policy,
    compute_R,
    lagrangian,
    make_table_class,
    run_fair_online,
    similarity_from_table,
    verify_bounds,
)
from conftest import EXAMPLE_D, EXAMPLE_ROWS, random_table_class


def make_trace(learner_kind="expweights", T=200, seed=0, k=3,
               alpha_prime=0.3, epsilon=0.2, label_probs=(0.9, 0.5, 0.1)):
    hc = make_table_class(EXAMPLE_ROWS)
    d = similarity_from_table(EXAMPLE_D)
    C = int(np.ceil((k + 1) / epsilon))
    cfg = RunConfig(T=T, k=k, alpha_prime=alpha_prime, epsilon=epsilon, C=C,
                    gamma=float(np.sqrt(np.log(hc.size) / T)), q=max(1, T // 10),
                    dummy_v=0, seed=seed)
    probs = np.asarray(label_probs)
    joint = np.stack([(1 - probs) / 3, probs / 3], axis=1)
    env = StochasticEnv(joint, k, np.random.default_rng(seed))
    aud = Auditor(alpha_prime, d)
    if learner_kind == "constant_zero":
        learner = ConstantZeroLearner(hc)
    else:
        learner = ExpWeightsLearner(hc, cfg.gamma, cfg.C + k)
    return run_fair_online(learner, env, aud, hc, cfg,
                           learner_kind=learner_kind), joint


class TestBestFairPolicy:
    def test_worked_example(self, example_class, example_d):
        b = Batch([0, 1, 2], [1, 0, 0])
        sol = best_fair_policy(example_class, [b], example_d, 0.1)
        assert sol.feasible
        assert sol.objective == pytest.approx(0.9, abs=1e-9)
        assert sol.policy.weights[0] == pytest.approx(0.1, abs=1e-9)
        preds = sol.policy.weights @ example_class.predictions
        assert preds[2] == pytest.approx(0.0, abs=1e-12)
        # cross-check against a dense grid at step 0.01
        best = np.inf
        ticks = 100
        for i in range(ticks + 1):
            for j in range(ticks + 1 - i):
                w = np.array([i, j, ticks - i - j]) / ticks
                p = w @ example_class.predictions
                gaps = p[:, None] - p[None, :]
                if (gaps - example_d - 0.1 <= 1e-12).all():
                    best = min(best, abs(p[0] - 1) + p[1] + p[2])
        assert sol.objective == pytest.approx(best, abs=1e-9)

    def test_slack_constraints_vacuous(self, example_class):
        d = similarity_from_table(np.zeros((3, 3)))
        b = Batch([0, 1, 2], [1, 0, 0])
        sol = best_fair_policy(example_class, [b], d, alpha=1.0)
        # gaps never exceed 1, so the optimum is the unconstrained minimizer
        assert sol.objective == pytest.approx(0.0, abs=1e-9)

    def test_constant_zero_class(self):
        hc = make_table_class([[0, 0, 0]])
        d = similarity_from_table(np.zeros((3, 3)))
        b = Batch([0, 1, 2], [1, 1, 0])
        sol = best_fair_policy(hc, [b], d, 0.2)
        assert sol.policy.weights.tolist() == [1.0]
        assert sol.objective == pytest.approx(2.0)

    def test_solution_respects_all_pairs(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            hc = random_table_class(rng, n, min(5, 2 ** n - 1))
            u = rng.uniform(0, 1, (n, n))
            d = np.triu(u, 1) + np.triu(u, 1).T
            batches = [Batch(rng.integers(0, n, 3), rng.integers(0, 2, 3))
                       for _ in range(int(rng.integers(1, 6)))]
            alpha = float(rng.uniform(0.05, 0.4))
            sol = best_fair_policy(hc, batches, d, alpha)
            assert sol.feasible
            assert sol.constraint_slacks.min() >= -1e-9
            # optimum never beats a feasible point-mass policy
            errs = np.array([sum(batch_err(Policy.point_mass(hc.size, h), hc, b)
                                 for b in batches) for h in range(hc.size)])
            preds = hc.predictions
            for h in range(hc.size):
                ok = all(
                    preds[h, x] - preds[h, x2] <= d[x, x2] + alpha + 1e-12
                    for b in batches for x in np.unique(b.xs) for x2 in np.unique(b.xs)
                    if x != x2)
                if ok:
                    assert sol.objective <= errs[h] + 1e-7


class TestBestLagrangianPolicy:
    def test_all_null_matches_err_minimizer(self):
        trace, _ = make_trace("constant_zero", T=40, seed=2)
        sol = best_lagrangian_policy(trace)
        errs = [sum(batch_err(Policy.point_mass(3, h), trace.hclass, r.batch)
                    for r in trace.records) for h in range(3)]
        assert sol.objective == pytest.approx(min(errs), abs=1e-9)

    def test_huge_penalty_pushes_gap_negative(self, example_class, example_d):
        # single audited round; with a huge C the minimizer drives
        # pi(x_r1) - pi(x_r2) as negative as the class allows
        cfg = RunConfig(T=1, k=2, alpha_prime=0.3, epsilon=0.2, C=1000,
                        gamma=0.1, q=1, dummy_v=0, seed=0)
        batch = Batch([1, 0], [1, 1])
        from fairlab.core import RoundRecord
        pol = Policy.uniform(3)
        rec = RoundRecord(1, pol, batch, (0, 1), (0, 1), 0.0, 0, 0.0)
        from fairlab.learners import RunTrace
        trace = RunTrace([rec], example_class, example_d, cfg, "stub", "scripted")
        sol = best_lagrangian_policy(trace)
        # vertex oracle: enumerate point masses
        vals = [lagrangian(Policy.point_mass(3, h), example_class, batch, (0, 1),
                           cfg.C, cfg.alpha) for h in range(3)]
        assert sol.objective == pytest.approx(min(vals), abs=1e-9)
        preds = sol.policy.weights @ example_class.predictions
        assert preds[1] - preds[0] == pytest.approx(-1.0)  # h1 gives gap -1

    def test_single_hypothesis(self):
        trace, _ = make_trace("constant_zero", T=10, seed=4)
        hc1 = make_table_class([[0, 0, 0]])
        trace = dataclasses.replace(trace, hclass=hc1,
                                    records=[dataclasses.replace(
                                        r, policy=Policy(np.array([1.0])))
                                        for r in trace.records])
        sol = best_lagrangian_policy(trace)
        expected = sum(lagrangian(Policy(np.array([1.0])), hc1, r.batch, r.audit,
                                  trace.config.C, trace.config.alpha)
                       for r in trace.records)
        assert sol.objective == pytest.approx(expected, abs=1e-9)


class TestComputeR:
    def test_constant_zero_self_comparison(self):
        trace, _ = make_trace("constant_zero", T=30, seed=5)
        zero = Policy.point_mass(3, 2)
        assert compute_R(trace, zero) == 0.0

    def test_all_rounds_violating_gives_zero(self, example_class, example_d):
        cfg = RunConfig(T=2, k=2, alpha_prime=0.3, epsilon=0.2, C=15,
                        gamma=0.1, q=1, dummy_v=0, seed=0)
        from fairlab.core import RoundRecord
        from fairlab.learners import RunTrace
        pol = Policy(np.array([0.5, 0.5, 0.0]))  # violates on (x0, x1)
        recs = [RoundRecord(t, pol, Batch([0, 1], [1, 0]), (0, 1), (0, 1), 1.0, 1, 1.0)
                for t in (1, 2)]
        trace = RunTrace(recs, example_class, example_d, cfg, "stub", "scripted")
        assert compute_R(trace, Policy.point_mass(3, 2)) == 0.0

    def test_two_round_hand_computation(self, example_class, example_d):
        cfg = RunConfig(T=2, k=2, alpha_prime=0.3, epsilon=0.2, C=15,
                        gamma=0.1, q=1, dummy_v=0, seed=0)
        from fairlab.core import RoundRecord
        from fairlab.learners import RunTrace
        violating = Policy(np.array([0.5, 0.5, 0.0]))
        clean = Policy.point_mass(3, 2)
        b1 = Batch([0, 1], [1, 0])  # clean round: err(clean) = 1
        b2 = Batch([0, 1], [1, 1])  # violating round, excluded from R
        recs = [
            RoundRecord(1, clean, b1, None, None,
                        batch_err(clean, example_class, b1), 0, 1.0),
            RoundRecord(2, violating, b2, (0, 1), (0, 1),
                        batch_err(violating, example_class, b2), 1, 1.0),
        ]
        trace = RunTrace(recs, example_class, example_d, cfg, "stub", "scripted")
        pi_star = Policy(np.array([0.1, 0.0, 0.9]))  # predictions (0.1, 0, 0)
        expected = recs[0].err - (abs(0.1 - 1) + 0.0)
        assert compute_R(trace, pi_star) == pytest.approx(expected, abs=1e-12)


def test_adversarial_arrivals_and_scripted_pairs():
    # the inequalities hold for arbitrary arrivals, not just iid ones:
    # cycle hostile label patterns and script some environment pairs
    from fairlab import ExpWeightsLearner, RunConfig, ScriptedEnv, run_fair_online

    hc = make_table_class(EXAMPLE_ROWS)
    d = similarity_from_table(EXAMPLE_D)
    T = 60
    cfg = RunConfig(T=T, k=4, alpha_prime=0.3, epsilon=0.2, C=25,
                    gamma=0.05, q=8, dummy_v=0, seed=0)
    patterns = [([0, 1, 2, 0], [1, 0, 0, 1]), ([2, 1, 0, 1], [1, 1, 0, 0]),
                ([0, 0, 1, 2], [0, 1, 1, 1])]
    batches = [Batch(*patterns[t % 3]) for t in range(T)]
    pairs = [[None, (0, 1), (1, 2)][t % 3] for t in range(T)]
    env = ScriptedEnv(batches, pairs=pairs)
    learner = ExpWeightsLearner(hc, cfg.gamma, cfg.C + cfg.k)
    trace = run_fair_online(learner, env, Auditor(0.3, d), hc, cfg)
    rep = verify_bounds(trace)
    failed = [c.name for c in rep.bound_checks if not c.passed]
    assert not failed, failed


def test_large_penalty_regime():
    # tight auditor tolerance forces a large C (ceil(5/0.04) = 125)
    trace, _ = make_trace("expweights", T=300, seed=17, k=4, alpha_prime=0.05,
                          epsilon=0.04)
    assert trace.config.C == 125
    rep = verify_bounds(trace)
    assert rep.all_pass()


def test_randomized_matrix_all_checks_pass():
    # 20 seeds x {expweights, ftpl} x {mahalanobis, random-nonmetric} at
    # T=500; the acceptance suite covers the T=5000 leg of the matrix
    from fairlab.cli import execute_run

    rng = np.random.default_rng(7)
    n = 6
    features = [[round(float(v), 6)] for v in rng.normal(0.0, 1.0, n)]
    hc_rows = random_table_class(rng, n, 10).predictions[:-1].astype(int).tolist()
    label_probs = [round(float(p), 6) for p in rng.uniform(0.1, 0.9, n)]
    base = {
        "universe": {"n": n, "features": features},
        "hypothesis_class": {"table": hc_rows},
        "environment": {"stochastic": {"uniform_labels": {"label_probs": label_probs}}},
        "run": {"T": 500, "k": 4, "alpha_prime": 0.3, "epsilon": 0.2},
    }
    sims = {
        "mahalanobis": {"mahalanobis": {"matrix": [[0.5]]}},
        "nonmetric": {"random": {"seed": 3, "scale": 1.0}},
    }
    for learner in ({"expweights": {}}, {"ftpl": {}}):
        for sim_name, sim in sims.items():
            for seed in range(20):
                cfg = dict(base, learner=learner, similarity=sim)
                trace, _ = execute_run(cfg, seed)
                rep = verify_bounds(trace)
                failed = [c.name for c in rep.bound_checks if not c.passed]
                assert not failed, \
                    f"{list(learner)[0]}/{sim_name}/seed{seed} failed {failed}"


class TestVerifyBounds:
    def test_constant_zero_all_pass(self):
        trace, _ = make_trace("constant_zero", T=60, seed=6)
        rep = verify_bounds(trace)
        assert rep.all_pass()
        assert rep.cumulative_unfair == 0.0

    def test_expweights_run_all_pass(self):
        trace, _ = make_trace("expweights", T=2000, seed=7)
        rep = verify_bounds(trace)
        assert rep.all_pass()
        names = [c.name for c in rep.bound_checks]
        assert "unfair_plus_misclass_regret_le_lagrangian_regret" in names
        assert "unfair_le_fair_lagrangian_regret_minus_R" in names
        assert "instantaneous_regret_on_violations" in names

    def test_flipped_unfair_flag_fails_fairness_check(self):
        trace, _ = make_trace("constant_zero", T=60, seed=8)
        records = list(trace.records)
        records[10] = dataclasses.replace(records[10], unfair=1)
        corrupted = dataclasses.replace(trace, records=records)
        rep = verify_bounds(corrupted)
        failed = {c.name for c in rep.bound_checks if not c.passed}
        assert "unfair_le_fair_lagrangian_regret_minus_R" in failed

    def test_regret_values_consistent(self):
        trace, _ = make_trace("expweights", T=400, seed=9)
        rep = verify_bounds(trace)
        lag_total = trace.lagrangians().sum()
        fair = best_fair_policy(trace.hclass, [r.batch for r in trace.records],
                                trace.similarity, trace.config.alpha)
        qa = best_fair_lagrangian_policy(trace)
        assert rep.misclass_regret == pytest.approx(trace.errs().sum() - fair.objective)
        assert rep.lagrangian_regret_vs_qalpha == pytest.approx(lag_total - qa.objective)
        assert rep.r_value == pytest.approx(compute_R(trace, fair.policy))
