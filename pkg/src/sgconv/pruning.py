"""Centroid-ranked connection pruning and compression-ratio accounting.

A centroid element (group i, channel j) stands for the bundle of
connections (f, j) over every filter f in group i. Pruning always acts
on whole bundles, so masks stay uniform within a group and the ratio
formula below agrees exactly with counting dead connections on the
mask. Elements whose bundle is already dead carry value 0 (masked
importance), which keeps cumulative targets well defined across
iterations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grouping import group_sizes
from .model import apply_mask, is_compressible

# float slack when comparing achieved ratios against accumulated t*s targets
RATIO_EPS = 1e-9


@dataclass
class SortedCentroids:
    """Centroid elements sorted ascending by (value, group_id, channel_id)."""
    entries: list  # of (value, layer_id, group_id, channel_id)


def build_sorted_centroids(centroids: np.ndarray, layer_id: int = 0) -> SortedCentroids:
    """Flatten a (g, C_in) centroid matrix into the ascending element order."""
    g, c_in = centroids.shape
    entries = [(float(centroids[i, j]), layer_id, i, j)
               for i in range(g) for j in range(c_in)]
    entries.sort(key=lambda e: (e[0], e[2], e[3]))
    return SortedCentroids(entries=entries)


def pruned_elements(mask: np.ndarray, assignment: np.ndarray, num_groups: int) -> np.ndarray:
    """(g, C_in) bool matrix: element is True when its whole bundle is dead."""
    dead = ~mask
    out = np.zeros((num_groups, mask.shape[1]), dtype=bool)
    for i in range(num_groups):
        rows = dead[assignment == i]
        if len(rows):
            out[i] = rows.all(axis=0)
    return out


def partial_elements(mask: np.ndarray, assignment: np.ndarray, num_groups: int) -> np.ndarray:
    """(g, C_in) bool matrix: True where a bundle is dead for only some filters."""
    dead = ~mask
    out = np.zeros((num_groups, mask.shape[1]), dtype=bool)
    for i in range(num_groups):
        rows = dead[assignment == i]
        if len(rows):
            out[i] = rows.any(axis=0) & ~rows.all(axis=0)
    return out


def compression_ratio_layer(assignment: np.ndarray, pruned: np.ndarray) -> float:
    """Fraction of connections removed: sum_i n_i*|g_i| / sum_i C_in*|g_i|."""
    num_groups, c_in = pruned.shape
    sizes = group_sizes(assignment, num_groups)
    removed = int((pruned.sum(axis=1) * sizes).sum())
    total = int(c_in * sizes.sum())
    return removed / total


def compression_ratio_network(items) -> float:
    """Pooled ratio over (assignment, pruned) pairs of the compressible layers."""
    removed = 0
    total = 0
    for assignment, pruned in items:
        num_groups, c_in = pruned.shape
        sizes = group_sizes(assignment, num_groups)
        removed += int((pruned.sum(axis=1) * sizes).sum())
        total += int(c_in * sizes.sum())
    if total == 0:
        return 0.0
    return removed / total


def model_ratio_items(model, kind: str | None = None):
    """(assignment, pruned-elements) pairs feeding the pooled ratio formula.

    Compressible layers that were never clustered count as one all-filter
    group, so their connections appear in the denominator.
    """
    items = []
    for layer in model.layers:
        if not is_compressible(layer) or (kind is not None and layer.kind != kind):
            continue
        if layer.grouping is not None:
            assignment = layer.grouping
            num_groups = int(assignment.max()) + 1
        else:
            assignment = np.zeros(layer.mask.shape[0], dtype=np.int64)
            num_groups = 1
        items.append((assignment, pruned_elements(layer.mask, assignment, num_groups)))
    return items


def mask_dead_fraction(mask: np.ndarray) -> float:
    """Independent accounting path: dead connections counted on the mask."""
    return int((~mask).sum()) / mask.size


def model_dead_fraction(model, kind: str | None = None) -> float:
    """Pooled dead-connection fraction over compressible layers, optionally by kind."""
    dead = 0
    total = 0
    for layer in model.layers:
        if layer.kind in ("conv2d", "fc") and layer.compress:
            if kind is not None and layer.kind != kind:
                continue
            dead += int((~layer.mask).sum())
            total += layer.mask.size
    if total == 0:
        return 0.0
    return dead / total


def minimal_truncation(order: SortedCentroids, sizes: np.ndarray, c_in: int,
                       target: float) -> int:
    """Smallest n whose first n elements reach the target removal ratio."""
    if target > 1.0 + 1e-12:
        raise ValueError(f"target ratio {target} exceeds 1: unreachable")
    if target <= RATIO_EPS:
        return 0
    total = int(c_in * sizes.sum())
    removed = 0
    for n, (_value, _layer, gid, _ch) in enumerate(order.entries, start=1):
        removed += int(sizes[gid])
        if removed / total >= target - RATIO_EPS:
            return n
    raise AssertionError("ratio never reached target <= 1")  # sizes all >= 1 makes this unreachable


def kill_elements(layer, assignment: np.ndarray, elements) -> None:
    """Kill the (group_id, channel_id) bundles: mask rows and zero kernels."""
    for gid, ch in elements:
        layer.mask[assignment == gid, ch] = False
    apply_mask(layer)


def select_and_prune(layer, grouping, t: int, s: float) -> np.ndarray:
    """Prune the layer up to the cumulative target t*s and return its mask.

    Selects the minimal ascending prefix of centroid elements whose
    removal ratio reaches t*s (already-dead bundles sort first at value
    0 and count toward the target), kills every selected bundle, and
    zeroes the matching kernels in the layer weights.
    """
    if t < 1:
        raise ValueError(f"iteration index t must be >= 1, got {t}")
    if not 0 < s <= 1:
        raise ValueError(f"pruning step s must be in (0, 1], got {s}")
    target = t * s
    if target > 1.0 + 1e-12:
        raise ValueError(f"cumulative target t*s = {target} exceeds 1: unreachable")
    order = build_sorted_centroids(grouping.centroids)
    sizes = group_sizes(grouping.assignment, grouping.num_groups)
    c_in = grouping.centroids.shape[1]
    n = minimal_truncation(order, sizes, c_in, target)
    kill_elements(layer, grouping.assignment,
                  [(gid, ch) for _v, _l, gid, ch in order.entries[:n]])
    return layer.mask
