"""Convert masked dense layers into explicit diverse group convolutions.

Each cluster of filters becomes one dense block that sees only its
surviving input channels. The channel gather is a selection operator
(one 1 per row; a channel may feed several blocks or none), while the
output side is a true permutation back to the original filter order.
Conversion never changes what the layer computes: a converted model is
checked against the masked dense forward before it is trusted.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .model import GroupBlock, GroupConvLayer, Model, is_compressible


class GranularityError(Exception):
    """Mask is not uniform across the filters of a group (corrupt mask)."""


class EquivalenceError(Exception):
    """Converted model disagrees with the masked dense forward."""


@dataclass
class GroupConvPlan:
    groups: list          # of (filter_indices, channel_indices) int arrays
    output_perm: np.ndarray  # concatenated filter indices; a true permutation


def build_group_plan(assignment: np.ndarray, mask: np.ndarray,
                     num_groups: int | None = None) -> GroupConvPlan:
    """Plan one block per group: member filters and surviving channels.

    Groups whose channels are all pruned get an empty channel list (their
    filters emit bias only). Raises GranularityError when the mask rows
    of a group disagree.
    """
    if num_groups is None:
        num_groups = int(assignment.max()) + 1
    groups = []
    for gid in range(num_groups):
        filt = np.flatnonzero(assignment == gid)
        rows = mask[filt]
        if len(filt) and not (rows == rows[0]).all():
            raise GranularityError(
                f"group {gid}: filters {filt.tolist()} carry different channel masks"
            )
        channels = np.flatnonzero(rows[0]) if len(filt) else np.empty(0, dtype=np.int64)
        groups.append((filt, channels))
    output_perm = np.concatenate([f for f, _ in groups]) if groups else np.empty(0, np.int64)
    if not np.array_equal(np.sort(output_perm), np.arange(mask.shape[0])):
        raise ValueError("group filter lists do not partition the filter set")
    return GroupConvPlan(groups=groups, output_perm=output_perm)


def convert_layer(layer):
    """Rewrite a masked conv/fc layer as an equivalent group-conv layer.

    A compressible layer that was never clustered is treated as a single
    all-filter group, provided its mask is still all-keep.
    """
    assignment = layer.grouping
    if assignment is None:
        if not layer.mask.all():
            raise ValueError(f"layer {layer.name!r} is pruned but has no grouping")
        assignment = np.zeros(layer.mask.shape[0], dtype=np.int64)
    plan = build_group_plan(assignment, layer.mask)
    blocks = []
    if layer.kind == "conv2d":
        kernel = layer.weight.shape[2]
        source = "conv2d"
        stride, padding = layer.stride, layer.padding
    else:
        kernel = 1
        source = "fc"
        stride, padding = 1, 0
    for filt, channels in plan.groups:
        w = layer.weight[np.ix_(filt, channels)]
        if layer.kind == "fc":
            w = w.reshape(len(filt), len(channels), 1, 1)
        blocks.append(GroupBlock(filter_indices=filt, channel_indices=channels,
                                 weight=np.ascontiguousarray(w)))
    bias = None if layer.bias is None else layer.bias.copy()
    return GroupConvLayer(
        name=layer.name, groups=blocks,
        in_channels=layer.mask.shape[1], out_channels=layer.mask.shape[0],
        kernel=kernel, bias=bias, stride=stride, padding=padding,
        activation=layer.activation, source=source,
    )


def convert_model(model: Model) -> Model:
    """Deploy: replace every compressible masked layer by group-conv blocks."""
    layers = []
    for layer in model.layers:
        if is_compressible(layer):
            layers.append(convert_layer(layer))
        else:
            layers.append(copy.deepcopy(layer))
    return Model(layers=layers)


def count_params(model: Model) -> int:
    """Live weights plus biases (dead conv connections drop their whole kernel)."""
    total = 0
    for layer in model.layers:
        if layer.kind == "conv2d":
            k = layer.weight.shape[2]
            total += int(layer.mask.sum()) * k * k
        elif layer.kind == "fc":
            total += int(layer.mask.sum())
        elif layer.kind == "groupconv":
            total += sum(g.weight.size for g in layer.groups)
        elif layer.kind == "affine_passthrough":
            total += layer.scale.size + layer.shift.size
            continue
        if getattr(layer, "bias", None) is not None:
            total += layer.bias.size
    return total


def _shape_after(layer, shape):
    from .ops import conv_out_size

    if layer.kind in ("conv2d", "groupconv") and not (
            layer.kind == "groupconv" and layer.source == "fc"):
        if len(shape) != 3:
            raise ValueError(f"layer {layer.name!r} needs a (C,H,W) input, got {shape}")
        c_in = layer.weight.shape[1] if layer.kind == "conv2d" else layer.in_channels
        c_out = layer.weight.shape[0] if layer.kind == "conv2d" else layer.out_channels
        kernel = layer.weight.shape[2] if layer.kind == "conv2d" else layer.kernel
        if shape[0] != c_in:
            raise ValueError(f"layer {layer.name!r} expects {c_in} channels, got {shape[0]}")
        ho = conv_out_size(shape[1], kernel, layer.stride, layer.padding)
        wo = conv_out_size(shape[2], kernel, layer.stride, layer.padding)
        if ho < 1 or wo < 1:
            raise ValueError(f"layer {layer.name!r} output collapses on input {shape}")
        return (c_out, ho, wo)
    if layer.kind == "fc" or (layer.kind == "groupconv" and layer.source == "fc"):
        width = int(np.prod(shape))
        c_in = layer.weight.shape[1] if layer.kind == "fc" else layer.in_channels
        c_out = layer.weight.shape[0] if layer.kind == "fc" else layer.out_channels
        if width != c_in:
            raise ValueError(f"layer {layer.name!r} expects width {c_in}, got {width}")
        return (c_out,)
    return tuple(shape)  # affine passthrough keeps its shape


def count_flops(model: Model, input_shape) -> int:
    """FLOPs of one forward pass at the given input shape, as 2 x MACs.

    Dense layers are billed at their full dense cost (masks do not make
    the dense kernel cheaper); group-conv layers are billed per block at
    gathered-channel sizes. Bias adds are not counted.
    """
    shape = tuple(int(v) for v in input_shape)
    macs = 0
    for layer in model.layers:
        out_shape = _shape_after(layer, shape)
        if layer.kind == "conv2d":
            c_out, c_in, k, _ = layer.weight.shape
            macs += c_out * c_in * k * k * out_shape[1] * out_shape[2]
        elif layer.kind == "fc":
            macs += layer.weight.shape[0] * layer.weight.shape[1]
        elif layer.kind == "groupconv":
            spatial = out_shape[1] * out_shape[2] if layer.source == "conv2d" else 1
            macs += sum(g.weight.size for g in layer.groups) * spatial
        elif layer.kind == "affine_passthrough":
            macs += int(np.prod(shape))
        shape = out_shape
    return 2 * macs


def infer_input_shape(model: Model, max_size: int = 64):
    """Smallest input shape the model accepts; used when no dataset is given."""
    first = model.layers[0]
    if first.kind == "fc":
        return (first.weight.shape[1],)
    if first.kind == "groupconv" and first.source == "fc":
        return (first.in_channels,)
    c_in = first.weight.shape[1] if first.kind == "conv2d" else \
        first.in_channels if first.kind == "groupconv" else first.scale.size
    for size in range(1, max_size + 1):
        shape = (c_in, size, size)
        try:
            count_flops(model, shape)
        except ValueError:
            continue
        return shape
    raise ValueError(f"could not infer an input shape up to {max_size}x{max_size}")


def max_forward_deviation(model_a: Model, model_b: Model, input_shape,
                          n_inputs: int = 100, seed=0) -> float:
    """Largest |a - b| over random standard-normal inputs."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_inputs, *input_shape)).astype(np.float32)
    ya = model_a.forward(x)
    yb = model_b.forward(x)
    return float(np.max(np.abs(ya - yb)))


def verify_equivalence(original: Model, deployed: Model, input_shape,
                       n_inputs: int = 100, seed=0, tol: float = 1e-5) -> float:
    """Check deployed outputs against the masked dense forward, or raise."""
    dev = max_forward_deviation(original, deployed, input_shape, n_inputs, seed)
    if dev > tol:
        raise EquivalenceError(
            f"deployed model deviates from masked dense forward: "
            f"max abs deviation {dev:.3e} > {tol:.1e}"
        )
    return dev
