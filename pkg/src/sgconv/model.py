"""Model container: typed layer records and whole-model forward.

A model is an ordered list of layer records. Connection masks live on
conv/fc layers as (C_out, C_in) boolean arrays; a dead conv connection
stands for the whole zeroed k x k kernel. Weights of masked-out
connections are kept at exactly zero, so the plain forward pass IS the
masked forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops


@dataclass
class ConvLayer:
    kind = "conv2d"
    name: str
    weight: np.ndarray                 # (C_out, C_in, k, k) float32
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    activation: str = "identity"
    compress: bool = True
    mask: np.ndarray = None            # bool (C_out, C_in); all-keep by default
    grouping: np.ndarray | None = None  # int group id per filter, set by the pipeline

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.weight.shape[:2], dtype=bool)


@dataclass
class FcLayer:
    kind = "fc"
    name: str
    weight: np.ndarray                 # (C_out, C_in) float32
    bias: np.ndarray | None = None
    activation: str = "identity"
    compress: bool = True
    mask: np.ndarray = None
    grouping: np.ndarray | None = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.weight.shape, dtype=bool)


@dataclass
class GroupBlock:
    """One deployed group: its filters, gathered input channels, weights."""
    filter_indices: np.ndarray         # ascending original filter ids
    channel_indices: np.ndarray        # surviving input channels (may be empty)
    weight: np.ndarray                 # (n_filters, n_channels, k, k)


@dataclass
class GroupConvLayer:
    kind = "groupconv"
    name: str
    groups: list[GroupBlock]
    in_channels: int
    out_channels: int
    kernel: int
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    activation: str = "identity"
    source: str = "conv2d"             # "conv2d" or "fc": fc blocks run on flat input
    compress: bool = False


@dataclass
class AffineLayer:
    """Frozen per-channel scale/shift (stands in for folded batch norm)."""
    kind = "affine_passthrough"
    name: str
    scale: np.ndarray                  # (C,)
    shift: np.ndarray                  # (C,)
    activation: str = "identity"
    compress: bool = False


Layer = ConvLayer | FcLayer | GroupConvLayer | AffineLayer


@dataclass
class Model:
    layers: list = field(default_factory=list)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer_forward(layer, x)
        return x

    def layer(self, name: str):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"no layer named {name!r}")


def flatten_batch(x, width, name):
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.shape[1] != width:
        raise ValueError(f"{name}: input width {x.shape[1]} != expected {width}")
    return x


def layer_forward(layer, x):
    """Run one layer (linear part + activation) on a batch."""
    if layer.kind == "conv2d":
        z = ops.conv2d_forward(x, layer.weight, layer.bias, stride=layer.stride,
                               padding=layer.padding, name=layer.name)
    elif layer.kind == "fc":
        x = flatten_batch(x, layer.weight.shape[1], layer.name)
        z = ops.fc_forward(x, layer.weight, layer.bias, name=layer.name)
    elif layer.kind == "groupconv":
        if layer.source == "fc":
            x = flatten_batch(x, layer.in_channels, layer.name)
            triples = [(g.filter_indices, g.channel_indices,
                        g.weight.reshape(g.weight.shape[0], g.weight.shape[1]))
                       for g in layer.groups]
            z = ops.group_fc_forward(x, triples, layer.out_channels, layer.bias,
                                     name=layer.name)
        else:
            triples = [(g.filter_indices, g.channel_indices, g.weight)
                       for g in layer.groups]
            z = ops.group_conv_forward(x, triples, layer.out_channels, layer.kernel,
                                       layer.bias, stride=layer.stride,
                                       padding=layer.padding, name=layer.name)
    elif layer.kind == "affine_passthrough":
        if x.ndim == 4:
            z = x * layer.scale.reshape(1, -1, 1, 1) + layer.shift.reshape(1, -1, 1, 1)
        else:
            z = x * layer.scale + layer.shift
    else:
        raise ValueError(f"unknown layer kind {layer.kind!r}")
    return ops.apply_activation(z, layer.activation)


def apply_mask(layer) -> None:
    """Zero the weights of dead connections in place (whole kernel for conv)."""
    if layer.kind == "conv2d":
        layer.weight *= layer.mask[:, :, None, None]
    elif layer.kind == "fc":
        layer.weight *= layer.mask


def is_compressible(layer) -> bool:
    return layer.kind in ("conv2d", "fc") and layer.compress


def validate_first_conv_uncompressed(model: Model) -> None:
    """The first conv layer feeds raw input and is never compressed."""
    for layer in model.layers:
        if layer.kind == "conv2d":
            if layer.compress:
                raise ValueError(
                    f"first conv2d layer {layer.name!r} must have compress=false"
                )
            return


def build_toy_cnn(seed: int = 0, num_classes: int = 10) -> Model:
    """Small 8x8-image CNN: conv 3->8 k3, conv 8->8 k3, fc 128->num_classes."""
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)

    return Model(layers=[
        ConvLayer("conv1", he((8, 3, 3, 3), 3 * 9), np.zeros(8, np.float32),
                  activation="relu", compress=False),
        ConvLayer("conv2", he((8, 8, 3, 3), 8 * 9), np.zeros(8, np.float32),
                  activation="relu", compress=True),
        FcLayer("fc1", he((num_classes, 128), 128), np.zeros(num_classes, np.float32),
                activation="identity", compress=True),
    ])
