"""Hindsight benchmarks and mechanical verification of the regret bounds.

Three linear programs over policy weights back the regret accounting: the
most accurate policy that is fair on every round's arrivals, the minimizer of
the summed penalized loss over the whole simplex, and the same minimizer
restricted to the fair set.  Fairness constraints are instantiated per
ordered instance pair (both orientations make the absolute value linear) and
deduplicated across rounds, which leaves the same feasible set with at most
n*(n-1) rows.  Every theorem inequality is then recomputed from the trace
and reported as an explicit (lhs, rhs, pass) check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Batch, HypothesisClass, Policy
from .learners import RunTrace, per_hypothesis_err
from .lp import solve_lp

CHECK_TOL = 1e-7
SLACK_TOL = 1e-9


@dataclass
class HindsightSolution:
    policy: Policy
    objective: float
    feasible: bool
    constraint_slacks: np.ndarray


@dataclass
class BoundCheck:
    name: str
    lhs: Optional[float]
    rhs: Optional[float]
    relation: str
    passed: bool

    def to_dict(self):
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "relation": self.relation, "pass": self.passed}


@dataclass
class RegretReport:
    misclass_regret: float
    lagrangian_regret_vs_qalpha: float
    lagrangian_regret_vs_simplex: float
    cumulative_unfair: float
    r_value: float
    bound_checks: List[BoundCheck]
    totals: dict = field(default_factory=dict)

    def all_pass(self) -> bool:
        return all(c.passed for c in self.bound_checks)

    def to_dict(self):
        return {
            "misclass_regret": self.misclass_regret,
            "lagrangian_regret_vs_qalpha": self.lagrangian_regret_vs_qalpha,
            "lagrangian_regret_vs_simplex": self.lagrangian_regret_vs_simplex,
            "cumulative_unfair": self.cumulative_unfair,
            "r_value": self.r_value,
            "totals": self.totals,
            "bound_checks": [c.to_dict() for c in self.bound_checks],
        }


def fairness_pair_constraints(hclass: HypothesisClass, batches: Sequence[Batch],
                              d: np.ndarray, alpha: float) -> Tuple[np.ndarray, np.ndarray, list]:
    """Linear rows for 'fair on every round': pi(x) - pi(x2) <= d + alpha for
    every ordered pair co-occurring in some batch.  Constraints depend only on
    the pair, so rows are deduplicated across rounds."""
    pairs = set()
    for batch in batches:
        uniq = np.unique(batch.xs)
        for x in uniq:
            for x2 in uniq:
                if x != x2:
                    pairs.add((int(x), int(x2)))
    pairs = sorted(pairs)
    if not pairs:
        return np.zeros((0, hclass.size)), np.zeros(0), pairs
    p = hclass.predictions
    a_ub = np.stack([p[:, x] - p[:, x2] for x, x2 in pairs])
    b_ub = np.array([float(d[x, x2]) + alpha for x, x2 in pairs])
    return a_ub, b_ub, pairs


def _err_objective(hclass: HypothesisClass, batches: Sequence[Batch]) -> np.ndarray:
    xs = np.concatenate([b.xs for b in batches])
    ys = np.concatenate([b.ys for b in batches])
    return per_hypothesis_err(hclass, xs, ys)


def _lagrangian_objective(hclass: HypothesisClass, batches: Sequence[Batch],
                          audits, C: float, alpha: float) -> Tuple[np.ndarray, float]:
    coeffs = _err_objective(hclass, batches).astype(float)
    const = 0.0
    p = hclass.predictions
    for batch, rho in zip(batches, audits):
        if rho is not None:
            a, b = int(batch.xs[rho[0]]), int(batch.xs[rho[1]])
            coeffs += C * (p[:, a] - p[:, b])
            const -= C * alpha
    return coeffs, const


def _solve_policy_lp(hclass: HypothesisClass, coeffs: np.ndarray, const: float,
                     a_ub: Optional[np.ndarray], b_ub: Optional[np.ndarray]) -> HindsightSolution:
    m = hclass.size
    res = solve_lp(coeffs, a_ub=a_ub, b_ub=b_ub,
                   a_eq=np.ones((1, m)), b_eq=np.ones(1))
    if res.status != "optimal":
        raise ValueError(f"policy LP came back {res.status}; class must contain "
                         "the constant-zero hypothesis")
    w = res.x / res.x.sum()
    policy = Policy(w)
    if a_ub is not None and len(a_ub) > 0:
        slacks = b_ub - a_ub @ w
        feasible = bool(slacks.min() >= -SLACK_TOL)
    else:
        slacks = np.zeros(0)
        feasible = True
    return HindsightSolution(policy, float(coeffs @ w + const), feasible, slacks)


def best_fair_policy(hclass: HypothesisClass, batches: Sequence[Batch],
                     d: np.ndarray, alpha: float,
                     objective_coeffs: Optional[np.ndarray] = None) -> HindsightSolution:
    """Minimize total misclassification over policies fair on every round's
    arrivals.  Feasibility is guaranteed by the constant-zero hypothesis.
    ``objective_coeffs`` swaps in a different linear objective (used for the
    distributional accuracy benchmark)."""
    a_ub, b_ub, _ = fairness_pair_constraints(hclass, batches, d, alpha)
    coeffs = _err_objective(hclass, batches) if objective_coeffs is None else objective_coeffs
    return _solve_policy_lp(hclass, np.asarray(coeffs, dtype=float), 0.0, a_ub, b_ub)


def best_lagrangian_policy(trace: RunTrace, C: Optional[float] = None,
                           alpha: Optional[float] = None) -> HindsightSolution:
    """Minimize the summed penalized loss (with the trace's audited pairs)
    over the whole simplex; the optimum is a vertex, i.e. a single
    hypothesis."""
    C = trace.config.C if C is None else C
    alpha = trace.config.alpha if alpha is None else alpha
    batches = [r.batch for r in trace.records]
    audits = [r.audit for r in trace.records]
    coeffs, const = _lagrangian_objective(trace.hclass, batches, audits, C, alpha)
    return _solve_policy_lp(trace.hclass, coeffs, const, None, None)


def best_fair_lagrangian_policy(trace: RunTrace) -> HindsightSolution:
    """Minimize the summed penalized loss over the fair benchmark set; this is
    the hindsight oracle the fairness-regret theorem compares against."""
    cfg = trace.config
    batches = [r.batch for r in trace.records]
    audits = [r.audit for r in trace.records]
    coeffs, const = _lagrangian_objective(trace.hclass, batches, audits, cfg.C, cfg.alpha)
    a_ub, b_ub, _ = fairness_pair_constraints(trace.hclass, batches, trace.similarity, cfg.alpha)
    return _solve_policy_lp(trace.hclass, coeffs, const, a_ub, b_ub)


def round_violation_masks(trace: RunTrace) -> Tuple[np.ndarray, np.ndarray]:
    """Brute force over all within-batch ordered pairs: (mask of rounds with a
    strictly positive tolerance-violation, per-round max signed margin)."""
    cfg = trace.config
    preds = trace.policy_matrix() @ trace.hclass.predictions  # (T, n)
    bx = trace.batch_xs()
    pb = np.take_along_axis(preds, bx, axis=1)  # (T, k)
    gaps = np.abs(pb[:, :, None] - pb[:, None, :])
    dsub = trace.similarity[bx[:, :, None], bx[:, None, :]]
    margins = gaps - dsub - cfg.alpha_prime
    k = bx.shape[1]
    margins[:, np.arange(k), np.arange(k)] = -np.inf
    max_margin = margins.max(axis=(1, 2))
    return max_margin > 0, max_margin


def compute_R(trace: RunTrace, pi_star: Policy) -> float:
    """Accuracy-loss excess of the run against pi_star, summed over exactly
    the rounds where the deployed policy had no within-batch violation at
    tolerance alpha_prime (empty set sums to 0)."""
    mask, _ = round_violation_masks(trace)
    clean = ~mask
    if not clean.any():
        return 0.0
    preds_star = pi_star.weights @ trace.hclass.predictions
    bx, by = trace.batch_xs(), trace.batch_ys()
    errs_star = np.abs(preds_star[bx] - by).sum(axis=1)
    return float(trace.errs()[clean].sum() - errs_star[clean].sum())


def verify_bounds(trace: RunTrace, tol: float = CHECK_TOL) -> RegretReport:
    """Recompute the hindsight benchmarks and check every inequality the run
    is supposed to satisfy.  A failed check flags an implementation bug, not
    an unlucky run: each inequality is unconditional given a complete auditor
    and a large-enough penalty."""
    cfg = trace.config
    hclass = trace.hclass
    batches = [r.batch for r in trace.records]
    errs = trace.errs()
    unfairs = trace.unfairs()
    lagrs = trace.lagrangians()

    fair = best_fair_policy(hclass, batches, trace.similarity, cfg.alpha)
    lag_simplex = best_lagrangian_policy(trace)
    lag_qalpha = best_fair_lagrangian_policy(trace)

    err_total = float(errs.sum())
    unfair_total = float(unfairs.sum())
    lagr_total = float(lagrs.sum())
    misclass_regret = err_total - fair.objective
    lr_simplex = lagr_total - lag_simplex.objective
    lr_qalpha = lagr_total - lag_qalpha.objective
    r_value = compute_R(trace, fair.policy)

    mask, max_margin = round_violation_masks(trace)
    flagged = np.array([r.audit is not None for r in trace.records])

    checks = []

    def le(name, lhs, rhs):
        checks.append(BoundCheck(name, float(lhs), float(rhs), "<=", bool(lhs <= rhs + tol)))

    le("unfair_plus_misclass_regret_le_lagrangian_regret", unfair_total + misclass_regret, lr_simplex)
    le("misclass_regret_le_lagrangian_regret", misclass_regret, lr_simplex)

    strong_penalty = cfg.C * cfg.epsilon >= cfg.k + 1 - 1e-9
    if strong_penalty:
        le("unfair_le_fair_lagrangian_regret_minus_R", unfair_total, lr_qalpha - r_value)

    # completeness cross-check: the auditor flags exactly the rounds where an
    # independent brute-force scan finds a violation (margins at the strict
    # boundary, within 1e-9 of zero, are exempt from the comparison)
    boundary = np.abs(max_margin) <= 1e-9
    disagreements = int(np.sum((mask != flagged) & ~boundary))
    checks.append(BoundCheck("auditor_completeness", float(disagreements), 0.0, "<=",
                             disagreements == 0))

    preds_star = fair.policy.weights @ hclass.predictions
    bx, by = trace.batch_xs(), trace.batch_ys()
    errs_star = np.abs(preds_star[bx] - by).sum(axis=1)
    aud_idx = np.flatnonzero(flagged)
    if aud_idx.size > 0:
        a_inst = np.array([trace.records[t].batch.xs[trace.records[t].audit[0]] for t in aud_idx])
        b_inst = np.array([trace.records[t].batch.xs[trace.records[t].audit[1]] for t in aud_idx])
        pen_star = cfg.C * (preds_star[a_inst] - preds_star[b_inst] - cfg.alpha)
        d_ab = trace.similarity[a_inst, b_inst]
        # pointwise fair-policy bound: penalty of a fair policy never exceeds
        # C times the flagged pair's distance
        pointwise_lhs = float((pen_star - cfg.C * d_ab).max())
        checks.append(BoundCheck("fair_policy_penalty_pointwise", pointwise_lhs, 0.0, "<=",
                                 pointwise_lhs <= tol))
        if strong_penalty:
            inst = lagrs[aud_idx] - (errs_star[aud_idx] + pen_star)
            inst_min = float(inst.min())
            checks.append(BoundCheck("instantaneous_regret_on_violations", inst_min, 1.0,
                                     ">=", inst_min >= 1.0 - tol))
    else:
        checks.append(BoundCheck("fair_policy_penalty_pointwise", None, 0.0, "<=", True))
        if strong_penalty:
            checks.append(BoundCheck("instantaneous_regret_on_violations", None, 1.0,
                                     ">=", True))

    totals = {
        "err_total": err_total,
        "unfair_total": unfair_total,
        "lagrangian_total": lagr_total,
        "best_fair_err": fair.objective,
        "best_lagrangian_simplex": lag_simplex.objective,
        "best_lagrangian_qalpha": lag_qalpha.objective,
    }
    return RegretReport(misclass_regret, lr_qalpha, lr_simplex, unfair_total,
                        r_value, checks, totals)
