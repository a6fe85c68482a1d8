import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fformation.clustering import (
    THRESHOLD_GRID,
    dominant_sets_partition,
    extract_dominant_set,
    peel,
    replicator_dynamics,
    replicator_step,
    tune_threshold,
)
from fformation.model import AffinityMatrix
from fformation.partition import GroupPartition

TWO_BLOCK = np.array(
    [
        [0, 0.9, 0.9, 0.05, 0.05],
        [0.9, 0, 0.9, 0.05, 0.05],
        [0.9, 0.9, 0, 0.05, 0.05],
        [0.05, 0.05, 0.05, 0, 0.9],
        [0.05, 0.05, 0.05, 0.9, 0],
    ]
)


def matrix(values, ids=None):
    values = np.asarray(values, dtype=float)
    ids = ids or [str(k + 1) for k in range(len(values))]
    return AffinityMatrix(tuple(ids), values)


def random_affinity(rng, n):
    a = rng.random((n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0)
    return a


def local_maxima_supports(A):
    """Supports of strict local maximisers of x'Ax on the simplex (KKT + second order)."""
    n = len(A)
    found = []
    for r in range(1, n + 1):
        for S in itertools.combinations(range(n), r):
            S = list(S)
            As = A[np.ix_(S, S)]
            # As x = lam * 1, sum x = 1
            M = np.zeros((r + 1, r + 1))
            M[:r, :r] = As
            M[:r, r] = -1
            M[r, :r] = 1
            rhs = np.zeros(r + 1)
            rhs[r] = 1
            try:
                sol = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                continue
            xs, lam = sol[:r], sol[r]
            if np.any(xs <= 1e-12):
                continue
            x = np.zeros(n)
            x[S] = xs
            if np.any(A @ x > lam + 1e-12):
                continue
            if r > 1:
                # negative definite on the tangent space {sum dx = 0}
                basis = np.eye(r)[:, 1:] - np.eye(r)[:, :1]
                if np.any(np.linalg.eigvalsh(basis.T @ As @ basis) >= 0):
                    continue
            found.append(frozenset(S))
    return found


def test_replicator_fixed_points():
    A = random_affinity(np.random.default_rng(0), 4)
    x = np.array([0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(replicator_step(A, x), x)
    B = np.array([[0, 1.0], [1.0, 0]])
    np.testing.assert_array_equal(replicator_step(B, np.array([0.5, 0.5])), [0.5, 0.5])
    np.testing.assert_array_equal(replicator_step(np.zeros((3, 3)), np.full(3, 1 / 3)), np.full(3, 1 / 3))


def test_replicator_three_node_support_matches_local_maximum():
    A = np.array([[0, 0.9, 0.1], [0.9, 0, 0.1], [0.1, 0.1, 0]])
    x, _ = replicator_dynamics(A)
    support = frozenset(np.flatnonzero(x > 1e-4))
    assert support == {0, 1}
    assert support in local_maxima_supports(A)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 7))
def test_replicator_simplex_and_monotone(seed, n):
    rng = np.random.default_rng(seed)
    A = random_affinity(rng, n)
    values = []

    def record(x):
        assert np.all(x >= 0)
        assert abs(x.sum() - 1) <= 1e-12
        values.append(x @ A @ x)

    x0 = np.full(n, 1 / n)
    replicator_dynamics(A, callback=record)
    prev = x0 @ A @ x0
    for v in values:
        assert v >= prev - 1e-12
        prev = v


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 6))
def test_extracted_support_is_a_local_maximum(seed, n):
    A = random_affinity(np.random.default_rng(seed), n)
    members, coh = extract_dominant_set(A)
    maxima = local_maxima_supports(A)
    assert members in maxima


def test_extract_examples():
    members, coh = extract_dominant_set(np.zeros((3, 3)))
    assert coh == 0
    members, coh = extract_dominant_set(np.array([[0, 1.0], [1.0, 0]]))
    assert members == {0, 1} and coh == pytest.approx(0.5)
    members, coh = extract_dominant_set(np.zeros((1, 1)))
    assert members == {0} and coh == 0


def test_two_block_extraction_matches_brute_force():
    n = len(TWO_BLOCK)
    best = max(
        (frozenset(S) for r in range(2, n + 1) for S in itertools.combinations(range(n), r)),
        key=lambda S: TWO_BLOCK[np.ix_(list(S), list(S))].sum() / len(S) ** 2,
    )
    members, _ = extract_dominant_set(TWO_BLOCK)
    assert members == best == {0, 1, 2}


def test_partition_examples():
    p = dominant_sets_partition(matrix(np.zeros((1, 1))), 0.2)
    assert p.groups == () and p.singletons == {"1"}
    p = dominant_sets_partition(matrix(TWO_BLOCK), 0.2)
    assert set(p.groups) == {frozenset("123"), frozenset("45")} and not p.singletons
    weak = np.full((4, 4), 0.01)
    np.fill_diagonal(weak, 0)
    p = dominant_sets_partition(matrix(weak), 0.2)
    assert p.groups == () and p.singletons == set("1234")
    with pytest.raises(ValueError):
        dominant_sets_partition(matrix(TWO_BLOCK), 1.5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 8), t=st.sampled_from(THRESHOLD_GRID))
def test_partition_property_and_equivariance(seed, n, t):
    rng = np.random.default_rng(seed)
    A = random_affinity(rng, n)
    ids = [f"n{k}" for k in range(n)]
    p = dominant_sets_partition(AffinityMatrix(tuple(ids), A), t)
    seen = set(p.singletons)
    for g in p.groups:
        assert len(g) >= 2 and not seen & g
        seen |= g
    assert seen == set(ids)
    perm = rng.permutation(n)
    B = A[np.ix_(perm, perm)]
    q = dominant_sets_partition(AffinityMatrix(tuple(ids[k] for k in perm), B), t)
    assert q == p


def test_peel_prefix_matches_direct_threshold():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A = random_affinity(rng, 6)
        full = peel(A)
        for t in (0.1, 0.3, 0.5):
            short = peel(A, t)
            assert short == full[: len(short)]


def test_tune_threshold_examples():
    ids = tuple("12345")
    truth = GroupPartition((frozenset("123"), frozenset("45")))
    t = tune_threshold([(matrix(TWO_BLOCK), truth)])
    assert t == 0.05  # every grid point up to 0.45 separates the blocks; lowest wins

    singles = GroupPartition((), frozenset(ids))
    t = tune_threshold([(matrix(TWO_BLOCK), singles)])
    coh = max(e.cohesiveness for e in peel(TWO_BLOCK))
    assert t > coh
    assert t == min(g for g in THRESHOLD_GRID if g > coh)

    assert tune_threshold([(matrix(TWO_BLOCK), truth)], grid=[0.7]) == 0.7
    with pytest.raises(ValueError):
        tune_threshold([])


def test_tune_threshold_custom_metric():
    truth = GroupPartition((frozenset("123"), frozenset("45")))
    # preferring fewer groups pushes the threshold just past the strongest block
    t = tune_threshold([(matrix(TWO_BLOCK), truth)], metric=lambda p, g: -len(p.groups))
    coh = peel(TWO_BLOCK)[0].cohesiveness
    assert t == min(g for g in THRESHOLD_GRID if g > coh)
