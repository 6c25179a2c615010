"""Command-line harness: gen-data, pretrain, train, eval, ablate, report.

Exit codes: 0 success, 1 usage/config error, 2 numeric abort during training.
Output files never contain timestamps, so reruns with identical inputs are
byte-identical.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import synthdata as sd
from . import training as tr
from .config import ConfigError, parse_config
from .metrics import MetricReport
from .nn import CheckpointError, load_mlp, save_mlp


def _load_cfg(args):
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "variant", None) is not None:
        cfg.train = replace(cfg.train, variant=args.variant)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    spec = cfg.data.spec()
    dataset = sd.generate_dataset(spec, cfg.data.n_instances, cfg.train.seed,
                                  cfg.data.test_fraction)
    out = args.out or cfg.paths.dataset
    sd.save_dataset(dataset, out)
    marginals = dataset.labels.mean(axis=0)
    cooc = (dataset.labels.T @ dataset.labels) / len(dataset.labels)
    print(f"wrote {out}: n={len(dataset.labels)} labels={dataset.n_labels} "
          f"d={dataset.d} seed={dataset.seed}")
    print("label marginals: " + " ".join(f"{m:.3f}" for m in marginals))
    print("co-occurrence matrix:")
    for row in cooc:
        print("  " + " ".join(f"{v:.3f}" for v in row))
    return 0


def _train_common(args, variant_override=None) -> int:
    cfg = _load_cfg(args)
    if variant_override is not None:
        cfg.train = replace(cfg.train, variant=variant_override)
    try:
        dataset = sd.load_dataset(cfg.paths.dataset)
    except FileNotFoundError:
        print(f"error: dataset file not found: {cfg.paths.dataset}",
              file=sys.stderr)
        return 1
    g, d, log = tr.train_model(dataset, cfg.train)
    out = args.out or cfg.paths.checkpoint
    save_mlp(g, out)
    log.to_csv(cfg.paths.log)
    print(f"wrote {out} and {cfg.paths.log} "
          f"(variant={cfg.train.variant}, seed={cfg.train.seed})")
    return 0


def cmd_pretrain(args) -> int:
    return _train_common(args, variant_override="baseline_only")


def cmd_train(args) -> int:
    return _train_common(args)


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    ckpt = args.checkpoint or cfg.paths.checkpoint
    try:
        g = load_mlp(ckpt)
        dataset = sd.load_dataset(cfg.paths.dataset)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if g.sizes[0] != dataset.d or g.sizes[-1] != dataset.n_labels:
        print(f"error: checkpoint sizes {g.sizes} do not match dataset "
              f"(d={dataset.d}, labels={dataset.n_labels})", file=sys.stderr)
        return 1
    rep = tr.evaluate(g, dataset, args.split)
    row = rep.csv_row(args.method)
    print(MetricReport.CSV_HEADER)
    print(row)
    if args.out:
        with open(args.out, "a") as f:
            f.write(row + "\n")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    try:
        dataset = sd.load_dataset(cfg.paths.dataset)
    except FileNotFoundError:
        print(f"error: dataset file not found: {cfg.paths.dataset}",
              file=sys.stderr)
        return 1
    results = tr.run_ablation(dataset, cfg.train, cfg.seeds)
    out = args.out or cfg.paths.report
    with open(out, "w") as f:
        f.write("method,seed," + MetricReport.CSV_HEADER.split(",", 1)[1] + "\n")
        for variant in tr.VARIANTS:
            for seed, rep in results[variant]:
                f.write(rep.csv_row(f"{variant},{seed}") + "\n")
    print(f"wrote {out} ({len(cfg.seeds)} seeds x {len(tr.VARIANTS)} variants)")
    return 0


def _read_rows(path):
    with open(path) as f:
        lines = [l.strip() for l in f if l.strip()]
    header = lines[0].split(",")
    return header, [l.split(",") for l in lines[1:]]


def cmd_report(args) -> int:
    metric_cols = ["C-P", "C-R", "C-F1", "O-P", "O-R", "O-F1", "mean_labels"]
    groups: dict[str, list[list[float]]] = {}
    header0 = None
    for path in args.inputs:
        header, rows = _read_rows(path)
        if header0 is None:
            header0 = header
        elif header != header0:
            print(f"error: {path}: column set {header} differs from "
                  f"{header0}", file=sys.stderr)
            return 1
        missing = [c for c in metric_cols if c not in header]
        if missing:
            print(f"error: {path}: missing columns {missing}", file=sys.stderr)
            return 1
        idx = [header.index(c) for c in metric_cols]
        for row in rows:
            method = row[0]
            groups.setdefault(method, []).append([float(row[i]) for i in idx])
    if not groups:
        print("error: no input rows", file=sys.stderr)
        return 1
    print("| method | " + " | ".join(metric_cols) + " |")
    print("|" + "---|" * (len(metric_cols) + 1))
    for method, vals in groups.items():
        med = np.median(np.array(vals), axis=0)
        print(f"| {method} | " + " | ".join(f"{v:.4f}" for v in med) + " |")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mlgan",
        description="Adversarial multi-label classification experiments "
                    "(synthetic data, conditional WGAN-gp critic).")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, variant=False, out=True):
        sp.add_argument("--config", required=True,
                        help="experiment config file ([data]/[gan]/[train]/"
                             "[paths]/[experiment] sections, key = value lines)")
        if seed:
            sp.add_argument("--seed", type=int, default=None,
                            help="override [train] seed")
        if variant:
            sp.add_argument("--variant", choices=tr.VARIANTS, default=None,
                            help="training variant (ablation switch)")
        if out:
            sp.add_argument("--out", default=None,
                            help="output path override")

    sp = sub.add_parser("gen-data", help="generate and write the synthetic dataset")
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("pretrain", help="logistic-only pretraining (baseline)")
    common(sp)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("train", help="pretrain then adversarial training")
    common(sp, variant=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    common(sp, seed=False)
    sp.add_argument("--checkpoint", default=None,
                    help="generator checkpoint (default: [paths] checkpoint)")
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument("--method", default="model",
                    help="method name for the CSV row")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="run all variants over [experiment] seeds")
    common(sp)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("report", help="markdown table of medians over seeds")
    sp.add_argument("inputs", nargs="+", help="metric CSV files")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (sd.DatasetError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (tr.TrainingAbort, FloatingPointError) as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
