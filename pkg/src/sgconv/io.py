"""Model persistence: .sgm.json manifest plus .sgm.bin weight blob.

The manifest is UTF-8 JSON with sorted keys, so identical models always
serialize to identical bytes. The blob holds nothing but little-endian
float32 values, laid out in layer order (weights, then bias), each range
referenced from the manifest by byte offset and length. Masks travel in
the manifest as base64-packed row-major bitsets, groupings as plain
integer arrays; neither ever round-trips through floating point.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .model import (AffineLayer, ConvLayer, FcLayer, GroupBlock, GroupConvLayer,
                    Model, validate_first_conv_uncompressed)

FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """Malformed manifest or blob."""


class VersionMismatchError(ModelFormatError):
    """Manifest format_version is not supported."""


class TruncatedBlobError(ModelFormatError):
    """A manifest range points past the end of the blob."""


class OverlappingRangesError(ModelFormatError):
    """Two manifest ranges claim the same blob bytes."""


def sgm_paths(prefix) -> tuple[Path, Path]:
    """Map a path prefix (or an .sgm.json path) to (manifest, blob) paths."""
    text = str(prefix)
    if text.endswith(".sgm.json"):
        text = text[: -len(".sgm.json")]
    elif text.endswith(".sgm.bin"):
        text = text[: -len(".sgm.bin")]
    return Path(text + ".sgm.json"), Path(text + ".sgm.bin")


class _BlobWriter:
    def __init__(self):
        self.chunks = []
        self.offset = 0

    def add(self, arr) -> tuple[int, int]:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        start = self.offset
        self.chunks.append(data)
        self.offset += len(data)
        return start, len(data)

    def bytes(self) -> bytes:
        return b"".join(self.chunks)


def _encode_mask(mask: np.ndarray) -> str:
    return base64.b64encode(np.packbits(mask.astype(np.uint8).ravel())).decode("ascii")


def _decode_mask(text: str, shape) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(base64.b64decode(text), dtype=np.uint8),
                         count=int(np.prod(shape)))
    return bits.reshape(shape).astype(bool)


def save_model(model: Model, manifest_path, blob_path) -> None:
    """Write the manifest and blob; byte-deterministic for identical models."""
    validate_first_conv_uncompressed(model)
    blob = _BlobWriter()
    records = []
    masks = {}
    groupings = {}
    for layer in model.layers:
        rec = {"name": layer.name, "kind": layer.kind}
        if layer.kind == "conv2d":
            c_out, c_in, k, _ = layer.weight.shape
            rec.update(out_channels=c_out, in_channels=c_in, kernel_size=k,
                       stride=layer.stride, padding=layer.padding,
                       activation=layer.activation, compress=layer.compress)
            rec["blob_offset"], rec["blob_length"] = blob.add(layer.weight)
        elif layer.kind == "fc":
            c_out, c_in = layer.weight.shape
            rec.update(out_features=c_out, in_features=c_in,
                       activation=layer.activation, compress=layer.compress)
            rec["blob_offset"], rec["blob_length"] = blob.add(layer.weight)
        elif layer.kind == "groupconv":
            rec.update(out_channels=layer.out_channels, in_channels=layer.in_channels,
                       kernel_size=layer.kernel, stride=layer.stride,
                       padding=layer.padding, activation=layer.activation,
                       source=layer.source, compress=False)
            rec["groups"] = []
            for block in layer.groups:
                offset, length = blob.add(block.weight)
                rec["groups"].append({
                    "filters": [int(v) for v in block.filter_indices],
                    "channels": [int(v) for v in block.channel_indices],
                    "blob_offset": offset, "blob_length": length,
                })
        elif layer.kind == "affine_passthrough":
            rec.update(channels=int(layer.scale.size), activation=layer.activation)
            rec["blob_offset"], rec["blob_length"] = blob.add(layer.scale)
            rec["bias_offset"], rec["bias_length"] = blob.add(layer.shift)
        else:
            raise ModelFormatError(f"cannot serialize layer kind {layer.kind!r}")
        if layer.kind in ("conv2d", "fc", "groupconv") and layer.bias is not None:
            rec["bias_offset"], rec["bias_length"] = blob.add(layer.bias)
        if layer.kind in ("conv2d", "fc"):
            if not layer.mask.all():
                masks[layer.name] = {"bits": _encode_mask(layer.mask)}
                rec["mask_ref"] = layer.name
            if layer.grouping is not None:
                groupings[layer.name] = {
                    "num_groups": int(layer.grouping.max()) + 1,
                    "assignment": [int(v) for v in layer.grouping],
                }
                rec["grouping_ref"] = layer.name
        records.append(rec)
    manifest = {"format_version": FORMAT_VERSION, "layers": records,
                "masks": masks, "groupings": groupings}
    Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    Path(blob_path).write_bytes(blob.bytes())


class _BlobReader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.path = path
        self.ranges = []

    def fetch(self, rec, shape, what, offset_key="blob_offset", length_key="blob_length"):
        offset, length = rec.get(offset_key), rec.get(length_key)
        if offset is None or length is None:
            raise ModelFormatError(f"{what}: missing {offset_key}/{length_key}")
        count = int(np.prod(shape)) if shape else 0
        if length != count * 4 or offset < 0:
            raise ModelFormatError(
                f"{what}: blob range ({offset}, {length}) does not match shape {tuple(shape)}"
            )
        if offset + length > len(self.raw):
            raise TruncatedBlobError(
                f"{what}: range ends at {offset + length} but {self.path} has "
                f"{len(self.raw)} bytes"
            )
        self.ranges.append((offset, length, what))
        arr = np.frombuffer(self.raw, dtype="<f4", count=count, offset=offset)
        return arr.reshape(shape).copy()

    def check_disjoint(self):
        spans = sorted((o, o + l, what) for o, l, what in self.ranges if l > 0)
        for (s0, e0, w0), (s1, e1, w1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise OverlappingRangesError(f"blob ranges overlap: {w0} and {w1}")


def load_model(manifest_path, blob_path) -> Model:
    """Materialize a model: weights, masks (default all-keep) and groupings."""
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or "format_version" not in manifest:
        raise ModelFormatError(f"{manifest_path}: missing format_version")
    if manifest["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{manifest_path}: format_version {manifest['format_version']} "
            f"unsupported (expected {FORMAT_VERSION})"
        )
    blob = _BlobReader(Path(blob_path).read_bytes(), blob_path)
    masks = manifest.get("masks", {})
    groupings = manifest.get("groupings", {})
    layers = []
    seen_names = set()
    for rec in manifest["layers"]:
        name, kind = rec["name"], rec["kind"]
        if name in seen_names:
            raise ModelFormatError(f"duplicate layer name {name!r}")
        seen_names.add(name)
        if kind == "conv2d":
            shape = (rec["out_channels"], rec["in_channels"],
                     rec["kernel_size"], rec["kernel_size"])
            weight = blob.fetch(rec, shape, name)
            bias = blob.fetch(rec, (rec["out_channels"],), f"{name}.bias",
                              "bias_offset", "bias_length") if "bias_offset" in rec else None
            layer = ConvLayer(name, weight, bias, stride=rec["stride"],
                              padding=rec["padding"], activation=rec["activation"],
                              compress=rec["compress"])
        elif kind == "fc":
            shape = (rec["out_features"], rec["in_features"])
            weight = blob.fetch(rec, shape, name)
            bias = blob.fetch(rec, (rec["out_features"],), f"{name}.bias",
                              "bias_offset", "bias_length") if "bias_offset" in rec else None
            layer = FcLayer(name, weight, bias, activation=rec["activation"],
                            compress=rec["compress"])
        elif kind == "groupconv":
            blocks = []
            for gi, grec in enumerate(rec["groups"]):
                filt = np.asarray(grec["filters"], dtype=np.int64)
                chan = np.asarray(grec["channels"], dtype=np.int64)
                shape = (len(filt), len(chan), rec["kernel_size"], rec["kernel_size"])
                blocks.append(GroupBlock(filt, chan,
                                         blob.fetch(grec, shape, f"{name}.group{gi}")))
            bias = blob.fetch(rec, (rec["out_channels"],), f"{name}.bias",
                              "bias_offset", "bias_length") if "bias_offset" in rec else None
            layer = GroupConvLayer(name, blocks, in_channels=rec["in_channels"],
                                   out_channels=rec["out_channels"],
                                   kernel=rec["kernel_size"], bias=bias,
                                   stride=rec["stride"], padding=rec["padding"],
                                   activation=rec["activation"], source=rec["source"])
        elif kind == "affine_passthrough":
            scale = blob.fetch(rec, (rec["channels"],), name)
            shift = blob.fetch(rec, (rec["channels"],), f"{name}.shift",
                               "bias_offset", "bias_length")
            layer = AffineLayer(name, scale, shift, activation=rec["activation"])
        else:
            raise ModelFormatError(f"unknown layer kind {kind!r}")
        if kind in ("conv2d", "fc"):
            if "mask_ref" in rec:
                ref = rec["mask_ref"]
                if ref not in masks:
                    raise ModelFormatError(f"{name}: mask_ref {ref!r} not found")
                layer.mask = _decode_mask(masks[ref]["bits"], layer.mask.shape)
            if "grouping_ref" in rec:
                ref = rec["grouping_ref"]
                if ref not in groupings:
                    raise ModelFormatError(f"{name}: grouping_ref {ref!r} not found")
                entry = groupings[ref]
                assignment = np.asarray(entry["assignment"], dtype=np.int64)
                if len(assignment) != layer.mask.shape[0]:
                    raise ModelFormatError(f"{name}: grouping length {len(assignment)} "
                                           f"!= {layer.mask.shape[0]} filters")
                if len(assignment) and (assignment.min() < 0
                                        or assignment.max() >= entry["num_groups"]):
                    raise ModelFormatError(f"{name}: group ids outside "
                                           f"[0, {entry['num_groups']})")
                layer.grouping = assignment
        layers.append(layer)
    blob.check_disjoint()
    model = Model(layers=layers)
    try:
        validate_first_conv_uncompressed(model)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc
    return model
