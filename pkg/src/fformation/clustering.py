"""Dominant-sets clustering of a symmetric affinity matrix.

Clusters are peeled off one at a time: replicator dynamics started from the
barycentre of the remaining nodes converge to a local maximiser of x'Ax, whose
support is the next cluster and whose value x'Ax is its cohesiveness.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .evaluation import frame_f1
from .partition import GroupPartition

SUPPORT_CUTOFF = 1e-4
TOLERANCE = 1e-10
MAX_ITERATIONS = 10_000
THRESHOLD_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


def replicator_step(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One discrete replicator update x_i <- x_i (Ax)_i / x'Ax."""
    ax = A @ x
    denom = float(x @ ax)
    if denom <= 0.0:
        return x.copy()
    y = x * ax / denom
    # renormalise to keep rounding drift off the simplex below 1e-12
    return y / y.sum()


def replicator_dynamics(A, x0=None, tol=TOLERANCE, max_iter=MAX_ITERATIONS, callback=None):
    """Iterate :func:`replicator_step` until the max-norm change drops below ``tol``.

    Returns ``(x, iterations)``. ``callback(x)`` is invoked after every step.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    x = np.full(n, 1.0 / n) if x0 is None else np.asarray(x0, dtype=np.float64)
    for it in range(1, max_iter + 1):
        nxt = replicator_step(A, x)
        if callback is not None:
            callback(nxt)
        delta = np.max(np.abs(nxt - x))
        x = nxt
        if delta < tol:
            return x, it
    return x, max_iter


def extract_dominant_set(A) -> tuple:
    """Support (as local indices) and cohesiveness x'Ax of the converged state."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if n == 0:
        raise ValueError("no nodes left to cluster")
    if n == 1:
        return frozenset([0]), 0.0
    x, _ = replicator_dynamics(A)
    members = frozenset(int(k) for k in np.flatnonzero(x > SUPPORT_CUTOFF))
    return members, float(x @ A @ x)


@dataclass(frozen=True)
class Extraction:
    members: frozenset  # global node indices
    cohesiveness: float


def _accepted(ext: Extraction, threshold: float) -> bool:
    # zero cohesiveness means no edges at all, never a group
    return len(ext.members) >= 2 and ext.cohesiveness > 0.0 and ext.cohesiveness >= threshold


def peel(A, threshold: float = 0.0) -> list:
    """Successive dominant sets until one has fewer than two members or falls below ``threshold``.

    The last entry is the rejected extraction, if any. Thresholds only decide
    where the sequence is cut, so the sequence computed with ``threshold=0``
    serves every threshold.
    """
    A = np.asarray(A, dtype=np.float64)
    remaining = list(range(A.shape[0]))
    out = []
    while remaining:
        sub = A[np.ix_(remaining, remaining)]
        local, coh = extract_dominant_set(sub)
        ext = Extraction(frozenset(remaining[k] for k in local), coh)
        out.append(ext)
        if not _accepted(ext, threshold):
            break
        remaining = [k for k in remaining if k not in ext.members]
    return out


def partition_from_peel(ids: Sequence, extractions: Sequence[Extraction], threshold: float) -> GroupPartition:
    groups = []
    for ext in extractions:
        if not _accepted(ext, threshold):
            break
        groups.append(frozenset(ids[k] for k in ext.members))
    return GroupPartition.from_groups(groups, ids)


def dominant_sets_partition(affinity, stop_threshold: float) -> GroupPartition:
    """Hard partition of ``affinity`` (an ``AffinityMatrix``) into groups and singletons."""
    if not 0.0 <= stop_threshold <= 1.0:
        raise ValueError("stop_threshold must lie in [0, 1]")
    ids = list(affinity.ids)
    return partition_from_peel(ids, peel(affinity.values, stop_threshold), stop_threshold)


def tune_threshold(
    validation: Sequence,
    metric: Callable[[GroupPartition, GroupPartition], float] = frame_f1,
    grid: Sequence[float] = THRESHOLD_GRID,
) -> float:
    """Grid-search the stop threshold that maximises the mean per-frame ``metric``.

    ``validation`` is a list of ``(AffinityMatrix, GroupPartition)`` pairs.
    Ties go to the lowest threshold.
    """
    validation = list(validation)
    if not validation:
        raise ValueError("threshold tuning needs at least one validation frame")
    if not grid:
        raise ValueError("empty threshold grid")
    peeled = [(list(aff.ids), peel(aff.values), truth) for aff, truth in validation]
    best_t, best_score = None, -np.inf
    for t in sorted(grid):
        score = np.mean([metric(partition_from_peel(ids, ex, t), truth) for ids, ex, truth in peeled])
        if score > best_score:
            best_t, best_score = float(t), score
    return best_t
