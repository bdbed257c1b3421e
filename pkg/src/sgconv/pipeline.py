"""Iterative compression driver with a desk-scale SGD fine-tuner.

One compression iteration re-scores importance on the masked weights,
re-clusters every compressible layer, and prunes each layer's weakest
centroid elements until the cumulative per-layer removal target t*s is
reached. Iterations repeat (optionally interleaved with short local
fine-tuning) until the pooled removal ratios of the conv and fc layers
reach their configured targets, after which a longer global fine-tuning
pass recovers accuracy. Everything is deterministic for a fixed seed.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .data import Dataset
from .deploy import count_flops, count_params, infer_input_shape
from .grouping import Grouping, centroids_for, kmeans_cluster
from .importance import layer_importance
from .model import Model, apply_mask, flatten_batch, is_compressible, \
    validate_first_conv_uncompressed
from .pruning import (RATIO_EPS, build_sorted_centroids, compression_ratio_layer,
                      compression_ratio_network, group_sizes, kill_elements,
                      minimal_truncation, model_dead_fraction, model_ratio_items,
                      partial_elements, pruned_elements)

REPORT_SCHEMA_VERSION = 1
FINETUNE_MODES = ("none", "global", "local+global")


@dataclass
class TrainConfig:
    epochs: int = 4
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_milestones: tuple = ()          # epochs at which lr is multiplied by lr_decay
    lr_decay: float = 0.1
    seed: object = 0                   # int or sequence of ints
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class PruneSchedule:
    num_groups: int = 8
    step: float = 0.05
    target_conv: float = 0.6
    target_fc: float = 0.6
    finetune: str = "global"           # "none" | "global" | "local+global"
    local_epochs: int = 4
    local_lr: float = 1e-3
    global_epochs: int = 20
    global_lr: float = 0.01
    global_milestones: tuple = (10, 16)
    lr_decay: float = 0.1
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 1e-4
    kmeans_restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("pruning step must be positive: targets are unreachable otherwise")
        for kind, target in (("conv", self.target_conv), ("fc", self.target_fc)):
            if not 0 <= target <= 1:
                raise ValueError(f"target_{kind} must be in [0, 1], got {target}")
            if target > 0 and self.step > target + RATIO_EPS:
                raise ValueError(
                    f"step {self.step} exceeds target_{kind} {target}; use step <= target"
                )
        if self.finetune not in FINETUNE_MODES:
            raise ValueError(f"finetune must be one of {FINETUNE_MODES}, got {self.finetune!r}")


def _softmax_cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = len(labels)
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype, copy=False)


def _forward_cached(model, x):
    caches = []
    for layer in model.layers:
        if layer.kind == "conv2d":
            z = ops.conv2d_forward(x, layer.weight, layer.bias, stride=layer.stride,
                                   padding=layer.padding, name=layer.name)
            caches.append((layer, x, z, None))
        elif layer.kind == "fc":
            flat = flatten_batch(x, layer.weight.shape[1], layer.name)
            z = ops.fc_forward(flat, layer.weight, layer.bias, name=layer.name)
            caches.append((layer, flat, z, x.shape))
        elif layer.kind == "affine_passthrough":
            z = x * layer.scale.reshape(1, -1, *([1] * (x.ndim - 2))) \
                + layer.shift.reshape(1, -1, *([1] * (x.ndim - 2)))
            caches.append((layer, x, z, None))
        else:
            raise ValueError(
                f"layer {layer.name!r} ({layer.kind}) has no backward support; "
                f"fine-tune before deployment, not after"
            )
        x = ops.apply_activation(z, layer.activation)
    return x, caches


def _backward(caches, dlogits):
    grads = {}
    d = dlogits
    for layer, x_in, z, unflatten in reversed(caches):
        d = ops.activation_backward(d, z, layer.activation)
        if layer.kind == "conv2d":
            d, dw, db = ops.conv2d_backward(d, x_in, layer.weight, stride=layer.stride,
                                            padding=layer.padding, name=layer.name)
            grads[layer.name] = (dw, db)
        elif layer.kind == "fc":
            d, dw, db = ops.fc_backward(d, x_in, layer.weight, name=layer.name)
            grads[layer.name] = (dw, db)
            if unflatten is not None and tuple(unflatten) != d.shape:
                d = d.reshape(unflatten)
        else:  # affine passthrough: frozen, gradient flows through
            d = d * layer.scale.reshape(1, -1, *([1] * (d.ndim - 2)))
    return grads


def sgd_finetune(model: Model, dataset: Dataset, config: TrainConfig) -> list:
    """SGD with momentum and weight decay; trains the model in place.

    Pruned connections are re-zeroed after every update, so dead
    connections never revive. Returns per-epoch training accuracy.
    Raises RuntimeError if the loss stops being finite.
    """
    if dataset is None or len(dataset) == 0:
        raise ValueError("fine-tuning needs a non-empty dataset")
    rng = np.random.default_rng(config.seed)
    trainable = [l for l in model.layers if l.kind in ("conv2d", "fc")]
    velocity = {l.name: (np.zeros_like(l.weight),
                         None if l.bias is None else np.zeros_like(l.bias))
                for l in trainable}
    trace = []
    n = len(dataset)
    for epoch in range(config.epochs):
        lr = config.lr * config.lr_decay ** sum(epoch >= m for m in config.lr_milestones)
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = dataset.features[idx], dataset.labels[idx]
            logits, caches = _forward_cached(model, x)
            if dataset.num_classes > logits.shape[1]:
                raise ValueError(f"dataset has {dataset.num_classes} classes but "
                                 f"model outputs width {logits.shape[1]}")
            loss, dlogits = _softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: loss={loss} at epoch {epoch}, batch {start // config.batch_size}"
                )
            grads = _backward(caches, dlogits)
            for layer in trainable:
                dw, db = grads[layer.name]
                vw, vb = velocity[layer.name]
                dw = dw + config.weight_decay * layer.weight
                vw *= config.momentum
                vw += dw
                layer.weight -= (lr * vw).astype(layer.weight.dtype, copy=False)
                if layer.bias is not None:
                    vb *= config.momentum
                    vb += db
                    layer.bias -= (lr * vb).astype(layer.bias.dtype, copy=False)
                apply_mask(layer)
        trace.append(evaluate(model, dataset)["top1"])
    return trace


def evaluate(model: Model, dataset: Dataset, batch_size: int = 512) -> dict:
    """Top-1 accuracy, plus top-5 when the label space has >= 5 classes.

    Argmax ties resolve to the lowest class index.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    top1 = 0
    top5 = 0
    want_top5 = dataset.num_classes >= 5
    width = None
    for start in range(0, n, batch_size):
        x = dataset.features[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = model.forward(x)
        width = logits.shape[1]
        if dataset.num_classes > width:
            raise ValueError(f"dataset has {dataset.num_classes} classes but "
                             f"model outputs width {width}")
        top1 += int((np.argmax(logits, axis=1) == y).sum())
        if want_top5:
            ranked = np.argsort(-logits, axis=1, kind="stable")[:, :5]
            top5 += int((ranked == y[:, None]).any(axis=1).sum())
    result = {"top1": top1 / n}
    result["top5"] = top5 / n if want_top5 else None
    return result


def _sync_bundles(layer, grouping: Grouping) -> int:
    """Promote partially-dead (group, channel) bundles to fully dead.

    Re-clustering can put filters with different historic masks into one
    group; bundle-level accounting and deployment both require masks to
    be uniform within a group, so any bundle with at least one dead
    member is killed outright. Returns the number of promoted bundles.
    """
    partial = partial_elements(layer.mask, grouping.assignment, grouping.num_groups)
    targets = np.argwhere(partial)
    if len(targets):
        kill_elements(layer, grouping.assignment, [(int(g), int(c)) for g, c in targets])
    return len(targets)


def _prune_layer(layer, schedule: PruneSchedule, t: int, layer_index: int) -> dict:
    """One compression step on one layer; returns its report record."""
    vectors = layer_importance(layer)
    grouping = kmeans_cluster(vectors, schedule.num_groups,
                              seed=[schedule.seed, 11, t, layer_index],
                              restarts=schedule.kmeans_restarts)
    synced = _sync_bundles(layer, grouping)
    if synced:
        # killed bundles changed the masked weights: refresh the centroid values
        vectors = layer_importance(layer)
        grouping.centroids = centroids_for(np.asarray(vectors, dtype=np.float64),
                                           grouping.assignment, grouping.num_groups)
    target = min(t * schedule.step, 1.0)
    order = build_sorted_centroids(grouping.centroids)
    sizes = group_sizes(grouping.assignment, grouping.num_groups)
    n = minimal_truncation(order, sizes, grouping.centroids.shape[1], target)
    kill_elements(layer, grouping.assignment,
                  [(gid, ch) for _v, _l, gid, ch in order.entries[:n]])
    layer.grouping = grouping.assignment
    pruned = pruned_elements(layer.mask, grouping.assignment, grouping.num_groups)
    return {
        "n": n,
        "ratio": compression_ratio_layer(grouping.assignment, pruned),
        "objective": grouping.objective,
        "sq_objective": grouping.sq_objective,
        "synced_bundles": synced,
    }


def run_algorithm1(model: Model, dataset: Dataset | None, schedule: PruneSchedule,
                   test_dataset: Dataset | None = None) -> tuple[Model, dict]:
    """Compress a model to the scheduled removal targets; returns (model, report).

    The input model is not modified. When the targets require no pruning
    at all, the model comes back unchanged (fine-tuning is skipped too).
    """
    schedule = copy.deepcopy(schedule)
    model = copy.deepcopy(model)
    validate_first_conv_uncompressed(model)
    if schedule.finetune != "none" and (dataset is None or len(dataset) == 0):
        raise ValueError("fine-tuning enabled but no dataset given")

    targets = {"conv2d": schedule.target_conv, "fc": schedule.target_fc}
    compressible = [l for l in model.layers if is_compressible(l)]
    eval_set = test_dataset if test_dataset is not None else dataset

    t_start = time.perf_counter()
    input_shape = dataset.features.shape[1:] if dataset is not None \
        else infer_input_shape(model)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "schedule": asdict(schedule),
        "params_before": count_params(model),
        "flops_before": count_flops(model, input_shape),
        "accuracy_before": evaluate(model, eval_set) if eval_set is not None else None,
        "iterations": [],
        "timings": {},
    }

    def kinds_pending():
        pend = []
        for kind, target in targets.items():
            if target <= 0:
                continue
            layers = [l for l in compressible if l.kind == kind]
            if layers and model_dead_fraction(model, kind) < target - RATIO_EPS:
                pend.append(kind)
        return pend

    prune_seconds = 0.0
    local_seconds = 0.0
    t = 1
    max_t = math.ceil(max(targets.values(), default=0) / schedule.step) + 2
    while True:
        pending = kinds_pending()
        if not pending:
            break
        if t > max_t:
            raise RuntimeError(f"pruning did not reach its targets within {max_t} iterations")
        tick = time.perf_counter()
        record = {"t": t, "layers": {}}
        for index, layer in enumerate(compressible):
            if layer.kind in pending:
                record["layers"][layer.name] = _prune_layer(layer, schedule, t, index)
        prune_seconds += time.perf_counter() - tick
        record["conv_ratio"] = model_dead_fraction(model, "conv2d")
        record["fc_ratio"] = model_dead_fraction(model, "fc")
        record["network_ratio"] = compression_ratio_network(model_ratio_items(model))
        if schedule.finetune == "local+global":
            tick = time.perf_counter()
            local_cfg = TrainConfig(epochs=schedule.local_epochs, lr=schedule.local_lr,
                                    batch_size=schedule.batch_size,
                                    momentum=schedule.momentum,
                                    weight_decay=schedule.weight_decay,
                                    seed=[schedule.seed, 22, t])
            sgd_finetune(model, dataset, local_cfg)
            local_seconds += time.perf_counter() - tick
        if eval_set is not None:
            record["accuracy"] = evaluate(model, eval_set)
        report["iterations"].append(record)
        t += 1

    global_seconds = 0.0
    if schedule.finetune != "none" and report["iterations"]:
        tick = time.perf_counter()
        global_cfg = TrainConfig(epochs=schedule.global_epochs, lr=schedule.global_lr,
                                 batch_size=schedule.batch_size,
                                 momentum=schedule.momentum,
                                 weight_decay=schedule.weight_decay,
                                 lr_milestones=schedule.global_milestones,
                                 lr_decay=schedule.lr_decay,
                                 seed=[schedule.seed, 33])
        sgd_finetune(model, dataset, global_cfg)
        global_seconds = time.perf_counter() - tick

    report["final"] = {
        "conv_ratio": model_dead_fraction(model, "conv2d"),
        "fc_ratio": model_dead_fraction(model, "fc"),
        "network_ratio": compression_ratio_network(model_ratio_items(model)),
        "network_dead_fraction": model_dead_fraction(model),
    }
    report["params_after"] = count_params(model)
    report["flops_after"] = count_flops(model, input_shape)
    report["accuracy_after"] = evaluate(model, eval_set) if eval_set is not None else None
    report["timings"] = {
        "prune_s": prune_seconds,
        "local_finetune_s": local_seconds,
        "global_finetune_s": global_seconds,
        "total_s": time.perf_counter() - t_start,
    }
    return model, report
