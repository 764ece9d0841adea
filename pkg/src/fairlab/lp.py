"""Dense two-phase simplex method with Bland's rule.

Sized for the hindsight benchmarks: tens of variables (one per hypothesis)
by at most a few hundred rows after pair deduplication.  Bland's rule makes
the pivot sequence deterministic and cycle-free, so LP results are exactly
reproducible across runs, which the artifact verifier relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

PIVOT_TOL = 1e-9


@dataclass
class LpResult:
    x: Optional[np.ndarray]
    objective: Optional[float]
    status: str  # "optimal" | "infeasible" | "unbounded"


def solve_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None) -> LpResult:
    """Minimize c @ x subject to a_ub @ x <= b_ub, a_eq @ x = b_eq, x >= 0."""
    c = np.asarray(c, dtype=float)
    n = c.size
    rows = []
    rhs = []
    kinds = []  # "ub" or "eq", pre sign-normalization
    if a_ub is not None and len(a_ub) > 0:
        a_ub = np.asarray(a_ub, dtype=float).reshape(-1, n)
        b_ub = np.asarray(b_ub, dtype=float).ravel()
        for r, b in zip(a_ub, b_ub):
            rows.append(r)
            rhs.append(b)
            kinds.append("ub")
    if a_eq is not None and len(a_eq) > 0:
        a_eq = np.asarray(a_eq, dtype=float).reshape(-1, n)
        b_eq = np.asarray(b_eq, dtype=float).ravel()
        for r, b in zip(a_eq, b_eq):
            rows.append(r)
            rhs.append(b)
            kinds.append("eq")
    m = len(rows)
    if m == 0:
        raise ValueError("LP needs at least one constraint")

    a = np.array(rows)
    b = np.array(rhs)
    flipped = b < 0
    a[flipped] *= -1.0
    b[flipped] *= -1.0

    slack_cols = {}
    art_cols = {}
    col = n
    for i, kind in enumerate(kinds):
        if kind == "ub":
            slack_cols[i] = col
            col += 1
    for i, kind in enumerate(kinds):
        # a flipped <= row became >=, so its slack enters with -1 and an
        # artificial is needed; every = row needs an artificial
        if kind == "eq" or flipped[i]:
            art_cols[i] = col
            col += 1
    ncols = col

    tableau = np.zeros((m, ncols + 1))
    tableau[:, :n] = a
    tableau[:, -1] = b
    basis = np.empty(m, dtype=int)
    for i, kind in enumerate(kinds):
        if kind == "ub":
            tableau[i, slack_cols[i]] = -1.0 if flipped[i] else 1.0
        if i in art_cols:
            tableau[i, art_cols[i]] = 1.0
            basis[i] = art_cols[i]
        else:
            basis[i] = slack_cols[i]

    art_set = set(art_cols.values())

    def pivot(obj_rows, row, col):
        tableau[row] /= tableau[row, col]
        factors = tableau[:, col].copy()
        factors[row] = 0.0
        tableau[:] -= np.outer(factors, tableau[row])
        for orow in obj_rows:
            if abs(orow[col]) > 0:
                orow -= orow[col] * tableau[row]
        basis[row] = col

    def run_phase(obj, other_objs, allowed):
        # obj holds reduced costs with -(objective value) in the last slot
        for _ in range(50000):
            entering = -1
            for j in range(ncols):
                if allowed[j] and obj[j] < -PIVOT_TOL:
                    entering = j  # Bland: first eligible index
                    break
            if entering < 0:
                return "optimal"
            col_vals = tableau[:, entering]
            best_row, best_ratio = -1, np.inf
            for i in range(m):
                if col_vals[i] > PIVOT_TOL:
                    ratio = tableau[i, -1] / col_vals[i]
                    if ratio < best_ratio - PIVOT_TOL or (
                            abs(ratio - best_ratio) <= PIVOT_TOL
                            and (best_row < 0 or basis[i] < basis[best_row])):
                        best_row, best_ratio = i, ratio
            if best_row < 0:
                return "unbounded"
            pivot([obj] + other_objs, best_row, entering)
        raise RuntimeError("simplex did not terminate")

    allowed = np.ones(ncols, dtype=bool)

    phase2_obj = np.zeros(ncols + 1)
    phase2_obj[:n] = c
    for i in range(m):
        if basis[i] < n and abs(phase2_obj[basis[i]]) > 0:
            phase2_obj -= phase2_obj[basis[i]] * tableau[i]

    if art_set:
        phase1_obj = np.zeros(ncols + 1)
        for j in art_set:
            phase1_obj[j] = 1.0
        for i in range(m):
            if basis[i] in art_set:
                phase1_obj -= tableau[i]
        status = run_phase(phase1_obj, [phase2_obj], allowed)
        if status != "optimal" or -phase1_obj[-1] > 1e-7:
            return LpResult(None, None, "infeasible")
        # drive any leftover zero-valued artificials out of the basis
        for i in range(m):
            if basis[i] in art_set:
                for j in range(ncols):
                    if j not in art_set and abs(tableau[i, j]) > PIVOT_TOL:
                        pivot([phase1_obj, phase2_obj], i, j)
                        break
        for j in art_set:
            allowed[j] = False
        if any(basis[i] in art_set for i in range(m)):
            # redundant rows: artificial stuck at zero; freeze those rows
            for i in range(m):
                if basis[i] in art_set:
                    tableau[i, :] = 0.0
                    tableau[i, basis[i]] = 1.0

    status = run_phase(phase2_obj, [], allowed)
    if status != "optimal":
        return LpResult(None, None, status)

    x = np.zeros(ncols)
    for i in range(m):
        x[basis[i]] = tableau[i, -1]
    sol = np.clip(x[:n], 0.0, None)
    return LpResult(sol, float(c @ sol), "optimal")
