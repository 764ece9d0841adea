import numpy as np
import pytest

from fairlab import make_table_class, similarity_from_table

# Three-instance worked example used throughout: two step hypotheses whose
# alternation makes the naive fairness-composition bound tight.
EXAMPLE_ROWS = [[1, 0, 0], [1, 1, 0]]
EXAMPLE_D = [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]


@pytest.fixture
def example_class():
    # order: h1=(1,0,0), h2=(1,1,0), appended zero
    return make_table_class(EXAMPLE_ROWS)


@pytest.fixture
def example_d():
    return similarity_from_table(EXAMPLE_D)


def random_table_class(rng, n, m):
    """Distinct random binary rows (constant-zero appended by the ctor)."""
    rows, seen = [], set()
    guard = 0
    while len(rows) < m and guard < 10000:
        guard += 1
        r = tuple(int(v) for v in rng.integers(0, 2, n))
        if sum(r) == 0 or r in seen:
            continue
        seen.add(r)
        rows.append(list(r))
    return make_table_class(rows)


def random_similarity(rng, n, scale=1.0):
    u = rng.uniform(0.0, scale, size=(n, n))
    d = np.triu(u, 1)
    return d + d.T


def random_policy(rng, m):
    from fairlab import Policy
    w = rng.exponential(1.0, m)
    return Policy(w / w.sum())
