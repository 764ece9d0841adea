"""Batch generators and the distributional (generalization) estimators.

The stochastic environment draws (instance, label) pairs iid from an explicit
joint table over the finite universe; the scripted environment replays a
fixed batch list and may also dictate the pair charged by the fairness loss.
Because the universe is finite, every distributional quantity here — the
expected loss of a policy and the probability mass of pairs it violates — is
computed exactly by enumeration, never sampled, so the bound checks are
noise-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .benchmark import BoundCheck, best_fair_lagrangian_policy, best_fair_policy
from .core import Batch, HypothesisClass, Policy
from .learners import RunTrace

PROB_TOL = 1e-12
EXACT_TOL = 1e-12


def validate_joint(joint: np.ndarray) -> np.ndarray:
    joint = np.asarray(joint, dtype=float)
    if joint.ndim != 2 or joint.shape[1] != 2:
        raise ValueError("joint distribution must have shape (n, 2)")
    if joint.min() < 0:
        raise ValueError("probabilities must be nonnegative")
    if abs(joint.sum() - 1.0) > PROB_TOL:
        raise ValueError("probabilities must sum to 1")
    return joint


class StochasticEnv:
    """IID batch generator from an explicit joint (instance, label) table."""

    kind = "stochastic"

    def __init__(self, joint: np.ndarray, k: int, rng: np.random.Generator):
        self.joint = validate_joint(joint)
        self.k = k
        self.rng = rng
        self._flat = self.joint.ravel()  # index x*2 + y

    @property
    def marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def next_batch(self, policy: Policy):
        idx = self.rng.choice(self._flat.size, size=self.k, p=self._flat)
        return Batch(idx // 2, idx % 2), None, False


class ScriptedEnv:
    """Replays a fixed batch list; optionally also scripts the pair the
    fairness loss is charged on (entries may be None to force a null pair)."""

    kind = "scripted"

    def __init__(self, batches: Sequence[Batch], pairs: Optional[Sequence] = None):
        if pairs is not None and len(pairs) < len(batches):
            raise ValueError("need one scripted pair entry per batch")
        self.batches = list(batches)
        self.pairs = list(pairs) if pairs is not None else None
        self._t = 0

    def next_batch(self, policy: Policy):
        if self._t >= len(self.batches):
            raise ValueError("scripted environment ran out of batches")
        batch = self.batches[self._t]
        pair = self.pairs[self._t] if self.pairs is not None else None
        overridden = self.pairs is not None
        self._t += 1
        return batch, pair, overridden


def average_policy(trace) -> Policy:
    """Uniform mixture of the deployed per-round policies; by linearity its
    prediction anywhere is the average of the per-round predictions."""
    if isinstance(trace, RunTrace):
        policies = [r.policy for r in trace.records]
    else:
        policies = list(trace)
    if not policies:
        raise ValueError("cannot average an empty policy sequence")
    w = np.mean([p.weights for p in policies], axis=0)
    return Policy(w / w.sum())


def empirical_beta(policy: Policy, hclass: HypothesisClass, marginal: np.ndarray,
                   d: np.ndarray, a: float) -> float:
    """Exact probability that an iid product pair has a strictly positive
    a-violation under the policy.  Ordered pairs including self-pairs, which
    can never violate since d has a zero diagonal."""
    marginal = np.asarray(marginal, dtype=float)
    if abs(marginal.sum() - 1.0) > PROB_TOL:
        raise ValueError("marginal must sum to 1")
    preds = policy.weights @ hclass.predictions
    gaps = np.abs(preds[:, None] - preds[None, :])
    mask = gaps - d - a > 0
    return float(marginal @ mask @ marginal)


def per_round_betas(trace: RunTrace, marginal: np.ndarray, a: float,
                    chunk: int = 512) -> np.ndarray:
    """Exact per-round violation probabilities of the deployed policies."""
    weights = trace.policy_matrix()
    preds = weights @ trace.hclass.predictions  # (T, n)
    d = trace.similarity
    out = np.empty(preds.shape[0])
    for start in range(0, preds.shape[0], chunk):
        block = preds[start:start + chunk]
        gaps = np.abs(block[:, :, None] - block[:, None, :])
        mask = gaps - d[None, :, :] - a > 0
        out[start:start + chunk] = np.einsum("i,tij,j->t", marginal, mask.astype(float), marginal)
    return out


def covering_check(policies: Sequence[Policy], betas: Sequence[float], q: int,
                   marginal: np.ndarray, hclass: HypothesisClass, d: np.ndarray,
                   alpha_prime: float):
    """Composition bound on the average policy: its violation probability at
    the relaxed tolerance alpha_prime + q/T is at most (1/q) * sum of the
    per-round probabilities at alpha_prime.  Returns (lhs, rhs, pass)."""
    T = len(policies)
    if not 1 <= q <= T:
        raise ValueError("q must lie in [1, T]")
    avg = average_policy(policies)
    lhs = empirical_beta(avg, hclass, marginal, d, alpha_prime + q / T)
    rhs = float(np.sum(betas)) / q
    return lhs, rhs, bool(lhs <= rhs + EXACT_TOL)


@dataclass
class GeneralizationReport:
    q: int
    delta: float
    avg_expected_loss: float
    best_fair_expected_loss: float
    lagrangian_regret_vs_qalpha: float
    beta_avg_at_relaxed: float
    beta_sum: float
    checks: List[BoundCheck]
    per_round_betas: np.ndarray = field(repr=False, default=None)

    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {
            "q": self.q,
            "delta": self.delta,
            "avg_expected_loss": self.avg_expected_loss,
            "best_fair_expected_loss": self.best_fair_expected_loss,
            "lagrangian_regret_vs_qalpha": self.lagrangian_regret_vs_qalpha,
            "beta_avg_at_relaxed": self.beta_avg_at_relaxed,
            "beta_sum": self.beta_sum,
            "checks": [c.to_dict() for c in self.checks],
        }


def generalization_report(trace: RunTrace, joint: np.ndarray,
                          q: Optional[int] = None, delta: Optional[float] = None,
                          lag_regret_qalpha: Optional[float] = None) -> GeneralizationReport:
    """Distributional accuracy and fairness checks for the average policy.

    Only meaningful when arrivals were iid, so scripted traces are refused.
    The joint table is the evaluator's ground truth (the learner never saw
    it); expectations and violation probabilities over it are exact.  Each
    bound holds with probability 1 - delta over the draw of the run, so an
    occasional failure on an unlucky seed is expected behavior, not a bug.
    """
    if trace.env_kind != "stochastic":
        raise ValueError("generalization report requires a stochastic environment")
    joint = validate_joint(joint)
    cfg = trace.config
    q = cfg.q if q is None else q
    delta = cfg.delta if delta is None else delta
    if not 1 <= q <= trace.T:
        raise ValueError("q must lie in [1, T]")
    T, k = trace.T, cfg.k
    marginal = joint.sum(axis=1)

    if lag_regret_qalpha is None:
        lag_total = float(trace.lagrangians().sum())
        lag_regret_qalpha = lag_total - best_fair_lagrangian_policy(trace).objective

    avg = average_policy(trace)
    preds_avg = avg.weights @ trace.hclass.predictions
    avg_loss = float((joint[:, 0] * preds_avg + joint[:, 1] * (1.0 - preds_avg)).sum())

    p = trace.hclass.predictions
    dist_coeffs = (joint[:, 0] * p + joint[:, 1] * (1.0 - p)).sum(axis=1)
    batches = [r.batch for r in trace.records]
    best_dist = best_fair_policy(trace.hclass, batches, trace.similarity, cfg.alpha,
                                 objective_coeffs=dist_coeffs)

    acc_rhs = best_dist.objective + lag_regret_qalpha / (k * T) + math.sqrt(8.0 * math.log(4.0 / delta) / T)

    betas = per_round_betas(trace, marginal, cfg.alpha_prime)
    beta_sum = float(betas.sum())
    beta_lhs = empirical_beta(avg, trace.hclass, marginal, trace.similarity,
                              cfg.alpha_prime + q / T)
    slack = math.sqrt(2.0 * T * math.log(2.0 / delta))
    beta_star = (lag_regret_qalpha + slack) / q

    checks = [
        BoundCheck("accuracy_generalization", avg_loss, acc_rhs, "<=",
                   bool(avg_loss <= acc_rhs + 1e-9)),
        BoundCheck("fairness_generalization", beta_lhs, beta_star, "<=",
                   bool(beta_lhs <= beta_star + 1e-9)),
        BoundCheck("bounded_beta_sum", beta_sum, lag_regret_qalpha + slack, "<=",
                   bool(beta_sum <= lag_regret_qalpha + slack + 1e-9)),
    ]
    return GeneralizationReport(q, delta, avg_loss, best_dist.objective,
                                float(lag_regret_qalpha), beta_lhs, beta_sum,
                                checks, per_round_betas=betas)
