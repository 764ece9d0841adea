"""Construction of finite hypothesis classes and separator sets.

A separator set is a set of instances that tells every pair of distinct
hypotheses apart; its size is what enters the perturbed-leader regret bound,
so we build one greedily and record the achieved size in run metadata rather
than assuming anything about minimality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import HypothesisClass, Universe


@dataclass(frozen=True)
class SeparatorSet:
    indices: tuple

    @property
    def size(self) -> int:
        return len(self.indices)


def make_threshold_class(universe: Union[int, Universe]) -> HypothesisClass:
    """Threshold hypotheses over an ordered universe: h_i(x_j) = 1 iff j >= i
    for i in 0..n, giving n+1 hypotheses including the all-zero one.

    Accepts a size (instances are taken in index order) or a Universe with a
    1-D feature, in which case positions follow the feature order.
    """
    if isinstance(universe, Universe):
        n = universe.n
        if universe.features is not None and universe.features.shape[1] == 1:
            order = np.argsort(universe.features[:, 0], kind="stable")
        else:
            order = np.arange(n)
    else:
        n = int(universe)
        order = np.arange(n)
    if n < 1:
        raise ValueError("universe must be nonempty")
    rank = np.empty(n, dtype=np.intp)
    rank[order] = np.arange(n)
    table = np.zeros((n + 1, n))
    for i in range(n + 1):
        table[i] = (rank >= i).astype(float)
    return HypothesisClass(table)


def make_table_class(rows: Sequence[Sequence[int]]) -> HypothesisClass:
    """Class from an explicit prediction matrix; appends the constant-zero
    hypothesis when missing and flags that via ``zero_appended``."""
    table = np.asarray(rows, dtype=float)
    if table.ndim != 2:
        raise ValueError("rows must form a 2-D matrix")
    if np.unique(table, axis=0).shape[0] != table.shape[0]:
        raise ValueError("duplicate hypothesis rows")
    appended = False
    if not (table.sum(axis=1) == 0).any():
        table = np.vstack([table, np.zeros((1, table.shape[1]))])
        appended = True
    return HypothesisClass(table, zero_appended=appended)


def find_separator(hclass: HypothesisClass) -> SeparatorSet:
    """Greedy set-cover separator: repeatedly add the instance distinguishing
    the most still-unseparated hypothesis pairs, ties to the lowest index.
    The result always passes verify_separator; it need not be minimum."""
    p = hclass.predictions
    m, n = p.shape
    if m == 1:
        return SeparatorSet(())
    ii, jj = np.triu_indices(m, k=1)
    # disagree[pair, x] : does instance x tell the pair apart
    disagree = p[ii] != p[jj]
    unsplit = np.ones(len(ii), dtype=bool)
    chosen = []
    while unsplit.any():
        counts = disagree[unsplit].sum(axis=0)
        x = int(np.argmax(counts))
        if counts[x] == 0:
            # unreachable for distinct hypotheses; guard against bad tables
            raise ValueError("hypotheses not separable by any instance")
        chosen.append(x)
        unsplit &= ~disagree[:, x]
    return SeparatorSet(tuple(chosen))


def verify_separator(hclass: HypothesisClass, sep: SeparatorSet) -> bool:
    """True iff every pair of distinct hypotheses differs somewhere on sep.
    Equivalently: the prediction rows restricted to sep are all distinct."""
    cols = list(sep.indices)
    restricted = hclass.predictions[:, cols]
    return np.unique(restricted, axis=0).shape[0] == hclass.size


def lift_separator(sep: SeparatorSet, dummy_v: int, width: int) -> np.ndarray:
    """Lift instance-level separator elements x to batch-level contexts
    (x, v, ..., v) of the given width; the lift preserves separation for the
    induced batch policies."""
    if width < 1:
        raise ValueError("context width must be positive")
    contexts = np.full((len(sep.indices), width), dummy_v, dtype=np.intp)
    contexts[:, 0] = sep.indices
    return contexts


def induced_batch_predictions(hclass: HypothesisClass, context: np.ndarray) -> np.ndarray:
    """Per-hypothesis label vectors on a batch context: row h is h applied
    coordinatewise to the context instances."""
    return hclass.predictions[:, context]
