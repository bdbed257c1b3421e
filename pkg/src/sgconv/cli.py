"""Command-line front end: prune, deploy, eval, report and sweep.

Exit codes: 0 ok, 2 usage/input error, 3 verification failure (a deploy
that fails its equivalence self-check or finds a corrupt mask). All
commands are deterministic for a fixed --seed; SG_THREADS caps the
worker threads the sweep may use (default 1).
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .data import load_dataset
from .deploy import (EquivalenceError, GranularityError, convert_model, count_flops,
                     count_params, infer_input_shape, verify_equivalence)
from .io import ModelFormatError, load_model, save_model, sgm_paths
from .pipeline import PruneSchedule, evaluate, run_algorithm1
from .pruning import compression_ratio_network, model_dead_fraction, model_ratio_items

SWEEP_SCHEMA_VERSION = 1


def _load(model_arg):
    manifest, blob = sgm_paths(model_arg)
    if not manifest.exists():
        raise FileNotFoundError(f"model manifest not found: {manifest}")
    if not blob.exists():
        raise FileNotFoundError(f"model blob not found: {blob}")
    return load_model(manifest, blob)


def cmd_prune(args) -> int:
    model = _load(args.model)
    dataset = load_dataset(args.data)
    test_set = load_dataset(args.test_data) if args.test_data else None
    schedule = PruneSchedule(
        num_groups=args.groups, step=args.step, target_conv=args.target_conv,
        target_fc=args.target_fc, finetune=args.finetune,
        local_epochs=args.local_epochs, global_epochs=args.global_epochs,
        local_lr=args.local_lr, global_lr=args.global_lr,
        batch_size=args.batch_size, seed=args.seed,
    )
    pruned, report = run_algorithm1(model, dataset, schedule, test_dataset=test_set)
    manifest, blob = sgm_paths(args.out)
    save_model(pruned, manifest, blob)
    report_path = Path(args.report) if args.report else Path(str(args.out) + ".report.json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    print(f"wrote {manifest} ({count_params(pruned)} live params), report {report_path}")
    print(f"final ratios: conv {report['final']['conv_ratio']:.4f} "
          f"fc {report['final']['fc_ratio']:.4f} "
          f"network {report['final']['network_ratio']:.4f}")
    return 0


def cmd_deploy(args) -> int:
    model = _load(args.model)
    deployed = convert_model(model)
    shape = _parse_shape(args.input_shape) if args.input_shape else infer_input_shape(model)
    deviation = verify_equivalence(model, deployed, shape, n_inputs=args.check_inputs,
                                   seed=args.seed, tol=args.tolerance)
    manifest, blob = sgm_paths(args.out)
    save_model(deployed, manifest, blob)
    print(f"wrote {manifest}; equivalence check passed "
          f"(max abs deviation {deviation:.3e} over {args.check_inputs} inputs)")
    return 0


def cmd_eval(args) -> int:
    model = _load(args.model)
    dataset = load_dataset(args.data)
    result = evaluate(model, dataset)
    line = f"top1 {result['top1']:.4f}"
    if result["top5"] is not None:
        line += f"  top5 {result['top5']:.4f}"
    print(line)
    return 0


def cmd_report(args) -> int:
    model = _load(args.model)
    if args.input_shape:
        shape = _parse_shape(args.input_shape)
    elif args.data:
        shape = load_dataset(args.data).features.shape[1:]
    else:
        shape = infer_input_shape(model)
    info = {
        "schema_version": SWEEP_SCHEMA_VERSION,
        "params": count_params(model),
        "flops": count_flops(model, shape),
        "input_shape": list(int(v) for v in shape),
        "conv_ratio": model_dead_fraction(model, "conv2d"),
        "fc_ratio": model_dead_fraction(model, "fc"),
        "network_ratio": compression_ratio_network(model_ratio_items(model)),
        "layers": [],
    }
    for layer in model.layers:
        entry = {"name": layer.name, "kind": layer.kind}
        if layer.kind in ("conv2d", "fc"):
            entry["dead_fraction"] = float((~layer.mask).sum() / layer.mask.size)
            entry["compress"] = layer.compress
        elif layer.kind == "groupconv":
            entry["groups"] = len(layer.groups)
        info["layers"].append(entry)
    if args.json:
        Path(args.json).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    print(f"params {info['params']}  flops {info['flops']}  (input {shape})")
    print(f"ratios: conv {info['conv_ratio']:.4f}  fc {info['fc_ratio']:.4f}  "
          f"network {info['network_ratio']:.4f}")
    for entry in info["layers"]:
        extra = ""
        if "dead_fraction" in entry:
            extra = f"  dead {entry['dead_fraction']:.4f}" + \
                ("" if entry["compress"] else "  (not compressed)")
        elif "groups" in entry:
            extra = f"  groups {entry['groups']}"
        print(f"  {entry['name']:<12} {entry['kind']:<18}{extra}")
    return 0


def _sweep_cell(base_model, dataset, test_set, args, groups, step, scope, seed):
    target_conv = args.target if scope in ("both", "conv") else 0.0
    target_fc = args.target if scope in ("both", "fc") else 0.0
    schedule = PruneSchedule(
        num_groups=groups, step=step, target_conv=target_conv, target_fc=target_fc,
        finetune=args.finetune, local_epochs=args.local_epochs,
        global_epochs=args.global_epochs, local_lr=args.local_lr,
        global_lr=args.global_lr, batch_size=args.batch_size, seed=seed,
    )
    pruned, report = run_algorithm1(base_model, dataset, schedule, test_dataset=test_set)
    acc = report["accuracy_after"]
    return {
        "status": "ok",
        "conv_ratio": f"{report['final']['conv_ratio']:.6f}",
        "fc_ratio": f"{report['final']['fc_ratio']:.6f}",
        "network_ratio": f"{report['final']['network_ratio']:.6f}",
        "top1": f"{acc['top1']:.6f}" if acc else "",
        "top5": f"{acc['top5']:.6f}" if acc and acc["top5"] is not None else "",
    }


def cmd_sweep(args) -> int:
    model = _load(args.model)
    dataset = load_dataset(args.data)
    test_set = load_dataset(args.test_data) if args.test_data else None
    groups_grid = [int(v) for v in args.groups.split(",") if v]
    steps_grid = [float(v) for v in args.steps.split(",") if v]
    scopes_grid = [v.strip() for v in args.scopes.split(",") if v.strip()]
    seeds_grid = [int(v) for v in args.seeds.split(",") if v]
    if not groups_grid or not steps_grid or not scopes_grid or not seeds_grid:
        raise ValueError("sweep grids must be non-empty")
    for scope in scopes_grid:
        if scope not in ("both", "conv", "fc"):
            raise ValueError(f"unknown scope {scope!r} (want both, conv or fc)")
    cells = list(itertools.product(groups_grid, steps_grid, scopes_grid, seeds_grid))

    def run(cell):
        groups, step, scope, seed = cell
        try:
            return _sweep_cell(model, dataset, test_set, args, groups, step, scope, seed)
        except Exception as exc:  # per-cell failures must not abort the sweep
            return {"status": f"error: {exc}", "conv_ratio": "", "fc_ratio": "",
                    "network_ratio": "", "top1": "", "top5": ""}

    workers = max(1, int(os.environ.get("SG_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(cell) for cell in cells]

    fields = ["schema_version", "groups", "step", "scope", "seed", "status",
              "conv_ratio", "fc_ratio", "network_ratio", "top1", "top5"]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for (groups, step, scope, seed), result in zip(cells, results):
            row = {"schema_version": SWEEP_SCHEMA_VERSION, "groups": groups,
                   "step": step, "scope": scope, "seed": seed}
            row.update(result)
            writer.writerow(row)
    print(f"wrote {args.out} ({len(cells)} rows)")
    return 0


def _parse_shape(text):
    parts = [int(v) for v in text.replace("x", ",").split(",") if v]
    if not parts or any(v < 1 for v in parts):
        raise ValueError(f"bad input shape {text!r}; want e.g. 3,8,8")
    return tuple(parts)


def _add_train_flags(sub):
    sub.add_argument("--finetune", choices=["none", "global", "local+global"],
                     default="global")
    sub.add_argument("--local-epochs", type=int, default=4)
    sub.add_argument("--local-lr", type=float, default=1e-3)
    sub.add_argument("--global-epochs", type=int, default=20)
    sub.add_argument("--global-lr", type=float, default=0.01)
    sub.add_argument("--batch-size", type=int, default=32)
    sub.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgconv",
        description="Compress conv/fc networks into diverse group convolutions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="cluster, prune and fine-tune a model")
    p.add_argument("--model", required=True, help="model manifest (.sgm.json) or prefix")
    p.add_argument("--data", required=True, help="training dataset (.sgd)")
    p.add_argument("--test-data", default=None, help="held-out dataset for accuracy reports")
    p.add_argument("--out", required=True, help="output model prefix")
    p.add_argument("--report", default=None, help="report path (default <out>.report.json)")
    p.add_argument("--groups", type=int, default=8)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--target-conv", type=float, default=0.6)
    p.add_argument("--target-fc", type=float, default=0.6)
    _add_train_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("deploy", help="convert masks into explicit group-conv blocks")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input-shape", default=None, help="e.g. 3,8,8 (inferred when omitted)")
    p.add_argument("--check-inputs", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("eval", help="top-1/top-5 accuracy on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="parameter count, FLOPs, removal ratios")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--input-shape", default=None)
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="grid of (groups, step, scope) pipeline runs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--groups", default="2,8", help="comma list of group counts")
    p.add_argument("--steps", default="0.05,0.3", help="comma list of pruning steps")
    p.add_argument("--scopes", default="both", help="comma list from both,conv,fc")
    p.add_argument("--seeds", default="0", help="comma list of seeds")
    p.add_argument("--target", type=float, default=0.6)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GranularityError, EquivalenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ModelFormatError, FileNotFoundError, IsADirectoryError, ValueError,
            RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
