"""Ground-truth similarity tables and the simulated fairness auditor.

The auditor sees one round's instances and the deployed policy, and either
names a single pair whose treatment gap exceeds its tolerance or stays
silent.  It never reveals numeric gap or distance values to the learner;
the pair itself is the only feedback.  Completeness matters: silence must
mean no violating pair exists, because the regret theorems lean on that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AuditOutcome, HypothesisClass, Policy

TIE_BREAKS = ("first-lexicographic", "max-violation", "seeded-random")


def validate_similarity(d: np.ndarray) -> np.ndarray:
    """Check a dissimilarity table: square, nonnegative, symmetric, zero
    diagonal.  The triangle inequality is deliberately not required."""
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("similarity table must be square")
    if d.min() < 0:
        raise ValueError("similarity values must be nonnegative")
    if not np.array_equal(d, d.T):
        raise ValueError("similarity table must be symmetric")
    if np.abs(np.diag(d)).max() != 0:
        raise ValueError("similarity diagonal must be zero")
    return d


def similarity_from_table(rows) -> np.ndarray:
    return validate_similarity(np.asarray(rows, dtype=float))


def make_mahalanobis(features: np.ndarray, a_matrix: np.ndarray) -> np.ndarray:
    """d(x, x') = sqrt((f_x - f_x')^T A (f_x - f_x')) for a symmetric PSD A.

    Included as a metric ground truth for contrast; the rest of the library
    never assumes d is a metric.
    """
    f = np.asarray(features, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2:
        raise ValueError("features must be 1-D or 2-D")
    a = np.asarray(a_matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != f.shape[1]:
        raise ValueError("A must be square and match the feature dimension")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ValueError("A must be symmetric")
    scale = max(1.0, float(np.abs(a).max()))
    if np.linalg.eigvalsh(a).min() < -1e-9 * scale:
        raise ValueError("A must be positive semidefinite")
    diffs = f[:, None, :] - f[None, :, :]
    quad = np.einsum("ijk,kl,ijl->ij", diffs, a, diffs)
    d = np.sqrt(np.clip(quad, 0.0, None))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return validate_similarity(d)


def make_random_nonmetric(n: int, seed: int, scale: float) -> np.ndarray:
    """Symmetric nonnegative table with iid uniform [0, scale] upper triangle
    and zero diagonal; deterministic given the seed and free to violate the
    triangle inequality."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, scale, size=(n, n))
    d = np.triu(u, k=1)
    return validate_similarity(d + d.T)


@dataclass
class Auditor:
    """Simulated auditor with tolerance alpha' and a deterministic (or
    seeded) tie-break among violating pairs.

    ``similarity`` may be swapped between rounds; nothing here assumes the
    table stays fixed.  The harness keeps one table per run so that the
    hindsight benchmarks are well-defined.
    """

    tolerance: float
    similarity: np.ndarray
    tie_break: str = "max-violation"
    rng: Optional[np.random.Generator] = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("auditor tolerance must be positive")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.tie_break == "seeded-random" and self.rng is None:
            raise ValueError("seeded-random tie-break needs an rng")
        self.similarity = validate_similarity(self.similarity)

    def audit(self, batch_xs: Sequence[int], policy: Policy,
              hclass: HypothesisClass) -> AuditOutcome:
        """Return one ordered pair of batch positions with a strictly positive
        tolerance-violation, or None when no ordered pair violates.

        The returned pair is oriented: the over-predicted instance comes
        first, which is what the signed penalty in the Lagrangian loss
        expects.  Soundness and completeness are both exact: a pair is
        returned iff one exists.
        """
        xs = np.asarray(batch_xs, dtype=np.intp)
        if xs.size < 2:
            raise ValueError("audit needs a batch of size >= 2")
        preds = policy.weights @ hclass.predictions[:, xs]
        margins = (preds[:, None] - preds[None, :]
                   - self.similarity[np.ix_(xs, xs)] - self.tolerance)
        np.fill_diagonal(margins, -np.inf)
        if margins.max() <= 0:  # strict: a zero margin is not a violation
            return None
        if self.tie_break == "max-violation":
            flat = int(np.argmax(margins))  # row-major ties resolve lexicographically
            return (flat // xs.size, flat % xs.size)
        hits = np.argwhere(margins > 0)
        if self.tie_break == "first-lexicographic":
            r1, r2 = hits[0]
            return (int(r1), int(r2))
        pick = hits[int(self.rng.integers(len(hits)))]
        return (int(pick[0]), int(pick[1]))
