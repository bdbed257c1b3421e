"""Filter grouping by k-means over importance vectors.

Lloyd iterations with k-means++ seeding and a fixed number of seeded
restarts. The quality figure of a grouping is the unsquared within-group
distance sum (with group means as centroids), which is not quite what
Lloyd minimizes; each restart is therefore polished by a deterministic
single-point local search under the unsquared objective, and the best
restart under that objective wins. The squared Lloyd objective is kept
alongside for diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Grouping:
    assignment: np.ndarray            # (C_out,) group id per filter, ids 0..g-1 all used
    centroids: np.ndarray             # (g, C_in) group means
    objective: float                  # sum of unsquared euclidean distances to centroids
    sq_objective: float               # Lloyd objective (sum of squared distances)
    iteration_objectives: list = field(default_factory=list)  # per-iteration sq objective

    @property
    def num_groups(self) -> int:
        return self.centroids.shape[0]


def group_sizes(assignment: np.ndarray, num_groups: int) -> np.ndarray:
    return np.bincount(assignment, minlength=num_groups)


def centroids_for(vectors: np.ndarray, assignment: np.ndarray, num_groups: int) -> np.ndarray:
    """Group means of the assigned vectors (groups must be non-empty)."""
    out = np.empty((num_groups, vectors.shape[1]), dtype=np.float64)
    for i in range(num_groups):
        members = vectors[assignment == i]
        if len(members) == 0:
            raise ValueError(f"group {i} has no members")
        out[i] = members.mean(axis=0)
    return out


def grouping_objective(vectors: np.ndarray, grouping: Grouping) -> float:
    """Sum over filters of the euclidean distance to their group centroid."""
    diffs = vectors - grouping.centroids[grouping.assignment]
    return float(np.sqrt((diffs ** 2).sum(axis=1)).sum())


def _sq_distances(vectors, centroids):
    # (n, g) squared euclidean distances
    return ((vectors[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp_init(vectors, num_groups, rng):
    n = len(vectors)
    chosen = [int(rng.integers(n))]
    d2 = ((vectors - vectors[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(num_groups - 1):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # duplicate points: any choice is equivalent
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random()))
            idx = min(idx, n - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, ((vectors - vectors[idx]) ** 2).sum(axis=1))
    return vectors[chosen].copy()


def _repair_empty(assignment, vectors, centroids, num_groups):
    """Give each empty group the point farthest from its current centroid."""
    sizes = np.bincount(assignment, minlength=num_groups)
    for empty in np.flatnonzero(sizes == 0):
        dist = ((vectors - centroids[assignment]) ** 2).sum(axis=1)
        movable = sizes[assignment] > 1  # never empty another group
        dist = np.where(movable, dist, -1.0)
        donor = int(np.argmax(dist))
        sizes[assignment[donor]] -= 1
        assignment[donor] = empty
        sizes[empty] += 1
    return assignment


def _lloyd(vectors, num_groups, rng, max_iter):
    centroids = _kmeanspp_init(vectors, num_groups, rng)
    prev = None
    trace = []
    for _ in range(max_iter):
        assignment = np.argmin(_sq_distances(vectors, centroids), axis=1)  # ties: lowest id
        assignment = _repair_empty(assignment, vectors, centroids, num_groups)
        centroids = centroids_for(vectors, assignment, num_groups)
        trace.append(float(((vectors - centroids[assignment]) ** 2).sum()))
        if prev is not None and np.array_equal(prev, assignment):
            break
        prev = assignment
    return assignment, centroids, trace


def _group_cost(vectors, assignment, gid):
    members = vectors[assignment == gid]
    if len(members) == 0:
        return 0.0
    centroid = members.mean(axis=0)
    return float(np.sqrt(((members - centroid) ** 2).sum(axis=1)).sum())


def _refine_unsquared(vectors, assignment, num_groups, max_passes=30):
    """Greedy single-point moves that lower the unsquared objective.

    Lloyd converges to local optima of the squared objective; the two
    objectives rank partitions differently often enough to matter, so a
    deterministic polish under the reported metric follows every
    restart. Moves that would empty a group are skipped. Cost per pass
    is roughly quadratic in the filter count, fine at desk scale.
    """
    assignment = assignment.copy()
    sizes = np.bincount(assignment, minlength=num_groups)
    costs = np.array([_group_cost(vectors, assignment, g) for g in range(num_groups)])
    for _ in range(max_passes):
        improved = False
        for idx in range(len(vectors)):
            src = int(assignment[idx])
            if sizes[src] == 1:
                continue
            best = (-1e-12, src, None, None)  # (gain, dst, new_src_cost, new_dst_cost)
            for dst in range(num_groups):
                if dst == src:
                    continue
                assignment[idx] = dst
                new_src = _group_cost(vectors, assignment, src)
                new_dst = _group_cost(vectors, assignment, dst)
                gain = (costs[src] + costs[dst]) - (new_src + new_dst)
                if gain > best[0]:
                    best = (gain, dst, new_src, new_dst)
                assignment[idx] = src
            gain, dst, new_src, new_dst = best
            if dst != src:
                assignment[idx] = dst
                costs[src], costs[dst] = new_src, new_dst
                sizes[src] -= 1
                sizes[dst] += 1
                improved = True
        if not improved:
            break
    return assignment


def kmeans_cluster(vectors: np.ndarray, num_groups: int, seed, *,
                   restarts: int = 8, max_iter: int = 300) -> Grouping:
    """Cluster importance vectors into num_groups groups.

    Deterministic for a given (vectors, num_groups, seed). num_groups is
    clamped to the number of vectors; fewer than one group is an error.
    """
    if num_groups < 1:
        raise ValueError(f"num_groups must be >= 1, got {num_groups}")
    vectors = np.asarray(vectors, dtype=np.float64)
    num_groups = min(num_groups, len(vectors))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        assignment, _, trace = _lloyd(vectors, num_groups, rng, max_iter)
        assignment = _refine_unsquared(vectors, assignment, num_groups)
        centroids = centroids_for(vectors, assignment, num_groups)
        objective = float(np.sqrt(((vectors - centroids[assignment]) ** 2)
                                  .sum(axis=1)).sum())
        if best is None or objective < best[0]:
            best = (objective, assignment, centroids, trace)
    objective, assignment, centroids, trace = best
    return Grouping(assignment=assignment, centroids=centroids,
                    objective=objective,
                    sq_objective=float(((vectors - centroids[assignment]) ** 2).sum()),
                    iteration_objectives=trace)
