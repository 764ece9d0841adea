"""Domain types and loss functionals for fair online batch classification.

Everything is tabulated over a finite instance universe indexed 0..n-1.
A hypothesis is a binary prediction vector over the universe, a policy is a
mixture of hypotheses, and all losses below are linear in the policy weights.
That linearity is load-bearing: the learners and the hindsight LP benchmarks
both rely on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

SIMPLEX_TOL = 1e-12

# None, or an ordered pair of batch positions (flagged "over-predicted" first).
AuditOutcome = Optional[Tuple[int, int]]


@dataclass(frozen=True)
class Universe:
    """Finite instance space; features are optional and only used for display
    and for building similarity tables."""

    n: int
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("universe needs at least one instance")
        if self.features is not None:
            f = np.atleast_2d(np.asarray(self.features, dtype=float))
            if f.shape[0] != self.n:
                raise ValueError("feature rows must match universe size")
            object.__setattr__(self, "features", f)


@dataclass
class HypothesisClass:
    """Ordered finite hypothesis class stored as an explicit prediction table.

    ``predictions`` has shape (m, n) with entries in {0, 1}; row h is the
    prediction vector of hypothesis h.  Duplicate rows are rejected.  Learners
    require a constant-zero row to exist (it keeps the fair benchmark set
    nonempty); ``zero_appended`` records whether a constructor added it.
    """

    predictions: np.ndarray
    zero_appended: bool = False
    contains_constant_zero: bool = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.predictions, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("prediction table must be a nonempty 2-D array")
        if not np.isin(p, (0.0, 1.0)).all():
            raise ValueError("hypothesis predictions must be 0/1")
        if np.unique(p, axis=0).shape[0] != p.shape[0]:
            raise ValueError("duplicate hypotheses in class")
        self.predictions = p
        self.contains_constant_zero = bool((p.sum(axis=1) == 0).any())

    @property
    def size(self) -> int:
        return self.predictions.shape[0]

    @property
    def n(self) -> int:
        return self.predictions.shape[1]

    def hypothesis(self, h: int) -> np.ndarray:
        return self.predictions[h]

    def constant_zero_index(self) -> int:
        idx = np.flatnonzero(self.predictions.sum(axis=1) == 0)
        if idx.size == 0:
            raise ValueError("class has no constant-zero hypothesis")
        return int(idx[0])


@dataclass(frozen=True)
class Policy:
    """Point in the simplex over a hypothesis class."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a 1-D vector")
        if w.min() < -SIMPLEX_TOL:
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "weights", w)

    @staticmethod
    def uniform(m: int) -> "Policy":
        return Policy(np.full(m, 1.0 / m))

    @staticmethod
    def point_mass(m: int, h: int) -> "Policy":
        w = np.zeros(m)
        w[h] = 1.0
        return Policy(w)


@dataclass(frozen=True)
class Batch:
    """One round's arrivals: k instance indices with binary labels, k >= 2
    so that pairs exist for auditing."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.intp)
        ys = np.asarray(self.ys, dtype=np.intp)
        if xs.ndim != 1 or xs.shape != ys.shape:
            raise ValueError("xs and ys must be 1-D with equal length")
        if xs.size < 2:
            raise ValueError("batch size must be at least 2")
        if xs.min() < 0:
            raise ValueError("instance indices must be nonnegative")
        if not np.isin(ys, (0, 1)).all():
            raise ValueError("labels must be binary")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def k(self) -> int:
        return self.xs.size


@dataclass(frozen=True)
class RoundRecord:
    """One protocol step: deployed policy, arrivals, audit outcome, and the
    realized losses.  ``env_pair`` is the pair charged by the fairness loss;
    by default it mirrors ``audit``."""

    t: int
    policy: Policy
    batch: Batch
    audit: AuditOutcome
    env_pair: AuditOutcome
    err: float
    unfair: int
    lagrangian: float


@dataclass
class RunConfig:
    """All run parameters.  ``alpha`` is derived (alpha_prime - epsilon,
    exactly) and never set independently.  ``bound_target`` records which
    penalty regime C was sized for: "fairness" needs C >= (k+1)/epsilon,
    "accuracy" only C >= 1/epsilon."""

    T: int
    k: int
    alpha_prime: float
    epsilon: float
    C: int
    gamma: float
    delta: float = 0.05
    q: int = 1
    dummy_v: int = 0
    seed: int = 0
    omega: Optional[float] = None
    bound_target: str = "fairness"

    @property
    def alpha(self) -> float:
        return self.alpha_prime - self.epsilon

    @property
    def k_prime(self) -> int:
        return self.k + 2 * self.C

    def validate(self, n: int) -> None:
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if not self.alpha_prime > 0:
            raise ValueError("alpha_prime must be positive")
        if not 0 < self.epsilon < self.alpha_prime:
            raise ValueError("epsilon must lie in (0, alpha_prime)")
        if self.bound_target not in ("fairness", "accuracy"):
            raise ValueError("bound_target must be 'fairness' or 'accuracy'")
        needed = (self.k + 1) / self.epsilon if self.bound_target == "fairness" else 1.0 / self.epsilon
        if self.C < needed - 1e-9:
            raise ValueError(f"C={self.C} too small for bound_target={self.bound_target} (need >= {needed:.6g})")
        if int(self.C) != self.C or self.C < 1:
            raise ValueError("C must be a positive integer")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.omega is not None and not self.omega > 0:
            raise ValueError("omega must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 1 <= self.q <= self.T:
            raise ValueError("q must lie in [1, T]")
        if not 0 <= self.dummy_v < n:
            raise ValueError("dummy_v must index the universe")


def default_penalty(k: int, epsilon: float) -> int:
    """Smallest integer penalty satisfying the stronger C >= (k+1)/epsilon."""
    return int(math.ceil((k + 1) / epsilon))


def default_gamma(m: int, T: int) -> float:
    """Exponential-weights rate sqrt(ln m / T)."""
    return math.sqrt(math.log(m) / T)


def default_q(T: int) -> int:
    """Covering parameter ceil(T^(3/4)), clipped to [1, T]."""
    return max(1, min(T, int(math.ceil(T ** 0.75 - 1e-9))))


# ---------------------------------------------------------------------------
# Loss functionals


def predict(policy: Policy, hclass: HypothesisClass, x: int) -> float:
    """Soft prediction at instance x: the weight-averaged hypothesis label."""
    if not 0 <= x < hclass.n:
        raise IndexError(f"instance {x} outside universe of size {hclass.n}")
    return float(policy.weights @ hclass.predictions[:, x])


def predict_all(policy: Policy, hclass: HypothesisClass) -> np.ndarray:
    """Soft predictions at every universe instance (length-n vector)."""
    return policy.weights @ hclass.predictions


def loss(p: float, y: int) -> float:
    """Expected misclassification loss of soft prediction p against label y:
    (1-p)*y + p*(1-y), which equals |p - y|."""
    if y not in (0, 1):
        raise ValueError("label must be binary")
    if not -1e-9 <= p <= 1 + 1e-9:
        raise ValueError(f"prediction {p} outside [0, 1]")
    p = min(1.0, max(0.0, p))
    return (1.0 - p) * y + p * (1 - y)


def batch_err(policy: Policy, hclass: HypothesisClass, batch: Batch) -> float:
    """Summed misclassification loss over the batch; range [0, k]."""
    preds = policy.weights @ hclass.predictions[:, batch.xs]
    return float(np.abs(preds - batch.ys).sum())


def violation(policy: Policy, hclass: HypothesisClass, x: int, x2: int,
              d: np.ndarray, a: float) -> float:
    """Positive part of |pi(x) - pi(x2)| - d(x, x2) - a.  Zero iff the pair is
    a-fair; symmetric in (x, x2) for symmetric d; self-pairs are legal."""
    gap = abs(predict(policy, hclass, x) - predict(policy, hclass, x2))
    return max(0.0, gap - float(d[x, x2]) - a)


def unfair_loss(policy: Policy, hclass: HypothesisClass, batch: Batch,
                rho: AuditOutcome, d: np.ndarray, a: float) -> int:
    """Fairness loss of the round: 1 iff rho names a pair whose a-violation is
    strictly positive, 0 when rho is null."""
    if rho is None:
        return 0
    r1, r2 = _check_pair(rho, batch.k)
    v = violation(policy, hclass, int(batch.xs[r1]), int(batch.xs[r2]), d, a)
    return 1 if v > 0 else 0


def lagrangian(policy: Policy, hclass: HypothesisClass, batch: Batch,
               rho: AuditOutcome, C: float, a: float) -> float:
    """Penalized round loss: batch misclassification plus C times the signed
    fairness margin pi(x_r1) - pi(x_r2) - a of the flagged pair.  The penalty
    is deliberately not clipped at zero, so it can be negative."""
    e = batch_err(policy, hclass, batch)
    if rho is None:
        return e
    if C <= 0:
        raise ValueError("penalty C must be positive")
    r1, r2 = _check_pair(rho, batch.k)
    p1 = predict(policy, hclass, int(batch.xs[r1]))
    p2 = predict(policy, hclass, int(batch.xs[r2]))
    return e + C * (p1 - p2 - a)


def _check_pair(rho: Tuple[int, int], k: int) -> Tuple[int, int]:
    r1, r2 = int(rho[0]), int(rho[1])
    if r1 == r2 or not (0 <= r1 < k and 0 <= r2 < k):
        raise ValueError(f"pair {rho} invalid for batch of size {k}")
    return r1, r2
