"""Online learners, the batch-inflation reduction, and the protocol loop.

Both learners consume inflated batches.  Inflation appends, per round,
C copies of the flagged over-predicted instance labeled 0 and C copies of
the flagged under-predicted instance labeled 1 (dummy copies when no flag),
which makes plain misclassification regret on the inflated stream coincide
with penalized-loss regret on the original one.  Exponential weights then
runs in log-space over the whole class; the perturbed-leader learner follows
the perturbed empirical minimizer, enumerating the class explicitly, which
is the honest "optimization oracle" at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import (
    AuditOutcome,
    Batch,
    HypothesisClass,
    Policy,
    RoundRecord,
    RunConfig,
    batch_err,
    lagrangian,
    unfair_loss,
)
from .hypotheses import SeparatorSet, lift_separator, verify_separator


@dataclass(frozen=True)
class InflatedBatch:
    """Original batch plus 2C penalty entries; length exactly k + 2C."""

    xs: np.ndarray
    ys: np.ndarray


def reduction_inflate(batch: Batch, rho: AuditOutcome, C: int, dummy_v: int) -> InflatedBatch:
    """Inflate one round.  With a flagged pair (r1, r2): append C copies of
    (x_r1, 0) then C copies of (x_r2, 1).  With no flag: the same around the
    dummy instance, so the batch size stays k + 2C every round."""
    if C < 1 or int(C) != C:
        raise ValueError("C must be a positive integer")
    if rho is None:
        a = b = int(dummy_v)
    else:
        a, b = int(batch.xs[rho[0]]), int(batch.xs[rho[1]])
    xs = np.concatenate([batch.xs, np.full(C, a, dtype=np.intp), np.full(C, b, dtype=np.intp)])
    ys = np.concatenate([batch.ys, np.zeros(C, dtype=np.intp), np.ones(C, dtype=np.intp)])
    return InflatedBatch(xs, ys)


def per_hypothesis_err(hclass: HypothesisClass, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Misclassification count of every hypothesis on the given entries."""
    return np.abs(hclass.predictions[:, xs] - ys).sum(axis=1)


class ExpWeightsLearner:
    """Multiplicative weights over the hypothesis class, maintained in
    log-space so T ~ 1e4 rounds cannot underflow.

    The update subtracts gamma times each hypothesis's inflated-batch loss
    from its log-weight, which is the same policy sequence as updating on the
    penalized loss directly (the two differ by a per-round constant).
    ``loss_range`` (C + k) is carried for the deterministic regret bound.
    """

    def __init__(self, hclass: HypothesisClass, gamma: float, loss_range: float):
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        if not hclass.contains_constant_zero:
            raise ValueError("learner needs a constant-zero hypothesis in the class")
        self.hclass = hclass
        self.gamma = gamma
        self.loss_range = loss_range
        self.log_weights = np.zeros(hclass.size)

    def policy(self) -> Policy:
        lw = self.log_weights - self.log_weights.max()
        w = np.exp(lw)
        return Policy(w / w.sum())

    def update(self, inflated: InflatedBatch) -> None:
        losses = per_hypothesis_err(self.hclass, inflated.xs, inflated.ys)
        self.log_weights -= self.gamma * losses


class FtplLearner:
    """Follow the perturbed leader over a separator set.

    Each round draws one fresh two-sided-exponential perturbation per
    separator element per label (scale 1/omega; omega = inf disables the
    perturbation, degenerating to follow-the-leader), adds the implied
    perturbation loss to every hypothesis's cumulative inflated-batch loss,
    and plays a point mass on the minimizer, lowest index on ties.  With
    ``mixture`` set it averages several independent draws instead, which
    approximates the induced randomized policy.
    """

    def __init__(self, hclass: HypothesisClass, separator: SeparatorSet, omega: float,
                 rng: np.random.Generator, dummy_v: int, context_width: int,
                 mixture: bool = False, mixture_draws: int = 16):
        if not omega > 0:
            raise ValueError("omega must be positive")
        if not verify_separator(hclass, separator):
            raise ValueError("separator set does not separate the class")
        if not hclass.contains_constant_zero:
            raise ValueError("learner needs a constant-zero hypothesis in the class")
        self.hclass = hclass
        self.separator = separator
        self.lifted_contexts = lift_separator(separator, dummy_v, context_width)
        self.omega = omega
        self.rng = rng
        self.mixture = mixture
        self.mixture_draws = mixture_draws
        self.cum_losses = np.zeros(hclass.size)
        self.history: List[InflatedBatch] = []
        cols = list(separator.indices)
        self._sep_preds = hclass.predictions[:, cols]  # (m, s)

    def _draw_leader(self) -> int:
        scores = self.cum_losses
        if self.separator.size > 0 and math.isfinite(self.omega):
            eta = self.rng.laplace(0.0, 1.0 / self.omega, size=(self.separator.size, 2))
            # perturbation loss of h: sum_x eta[x,0]*l(h(x),0) + eta[x,1]*l(h(x),1)
            pert = self._sep_preds @ eta[:, 0] + (1.0 - self._sep_preds) @ eta[:, 1]
            scores = scores + pert
        return int(np.argmin(scores))  # argmin takes the lowest index on ties

    def policy(self) -> Policy:
        m = self.hclass.size
        if not self.mixture:
            return Policy.point_mass(m, self._draw_leader())
        w = np.zeros(m)
        for _ in range(self.mixture_draws):
            w[self._draw_leader()] += 1.0
        return Policy(w / w.sum())

    def update(self, inflated: InflatedBatch) -> None:
        self.cum_losses += per_hypothesis_err(self.hclass, inflated.xs, inflated.ys)
        self.history.append(inflated)


class ConstantZeroLearner:
    """Deploys the constant-zero hypothesis forever; useful as a trivially
    fair baseline and as a test stub."""

    def __init__(self, hclass: HypothesisClass):
        self.hclass = hclass
        self._policy = Policy.point_mass(hclass.size, hclass.constant_zero_index())

    def policy(self) -> Policy:
        return self._policy

    def update(self, inflated: InflatedBatch) -> None:
        pass


def default_omega(m: int, separator_size: int, k_prime: int, T: int, C: int, k: int) -> float:
    """Perturbation rate balancing the two terms of the expected-regret bound,
    using the a-priori estimate T*(C + k/2)^2 for the summed squared dual
    norms (each inflated round has C + #zero-labels zeros)."""
    s = max(1, separator_size)
    sum_sq_estimate = T * (C + k / 2.0) ** 2
    return math.sqrt(10.0 * math.log(max(2, m))
                     / (4.0 * k_prime * math.sqrt(s * k_prime) * sum_sq_estimate))


@dataclass
class RunTrace:
    """Complete record of one run: per-round records plus everything needed
    to re-derive and verify them (class, similarity table, config, resolved
    rates, achieved separator size)."""

    records: List[RoundRecord]
    hclass: HypothesisClass
    similarity: np.ndarray
    config: RunConfig
    learner_kind: str
    env_kind: str
    gamma: Optional[float] = None
    omega: Optional[float] = None
    separator_size: Optional[int] = None

    @property
    def T(self) -> int:
        return len(self.records)

    def policy_matrix(self) -> np.ndarray:
        return np.stack([r.policy.weights for r in self.records])

    def batch_xs(self) -> np.ndarray:
        return np.stack([r.batch.xs for r in self.records])

    def batch_ys(self) -> np.ndarray:
        return np.stack([r.batch.ys for r in self.records])

    def errs(self) -> np.ndarray:
        return np.array([r.err for r in self.records])

    def unfairs(self) -> np.ndarray:
        return np.array([r.unfair for r in self.records])

    def lagrangians(self) -> np.ndarray:
        return np.array([r.lagrangian for r in self.records])


def run_fair_online(learner, environment, auditor, hclass: HypothesisClass,
                    config: RunConfig, learner_kind: str = "",
                    gamma: Optional[float] = None, omega: Optional[float] = None,
                    separator_size: Optional[int] = None) -> RunTrace:
    """Drive the online fair batch protocol for T rounds.

    Per round: deploy the learner's policy, let the environment pick a batch
    (and optionally the pair it charges the fairness loss on; by default that
    mirrors the auditor), audit at tolerance alpha_prime, record the three
    losses, inflate with the audited pair, and update the learner.  The
    fairness loss is evaluated at tolerance alpha_prime on the environment's
    pair; the penalized loss uses (C, alpha) with the auditor's pair.
    """
    config.validate(hclass.n)
    if auditor.tolerance != config.alpha_prime:
        raise ValueError("auditor tolerance must equal config.alpha_prime")
    records = []
    for t in range(1, config.T + 1):
        pol = learner.policy()
        batch, env_pair, overridden = environment.next_batch(pol)
        if batch.k != config.k:
            raise ValueError(f"environment produced batch of size {batch.k}, expected {config.k}")
        rho_audit = auditor.audit(batch.xs, pol, hclass)
        rho_env = env_pair if overridden else rho_audit
        err = batch_err(pol, hclass, batch)
        unfair = unfair_loss(pol, hclass, batch, rho_env, auditor.similarity, config.alpha_prime)
        lagr = lagrangian(pol, hclass, batch, rho_audit, config.C, config.alpha)
        learner.update(reduction_inflate(batch, rho_audit, config.C, config.dummy_v))
        records.append(RoundRecord(t, pol, batch, rho_audit, rho_env, err, unfair, lagr))
    return RunTrace(records, hclass, auditor.similarity, config,
                    learner_kind=learner_kind,
                    env_kind=getattr(environment, "kind", "unknown"),
                    gamma=gamma, omega=omega, separator_size=separator_size)
