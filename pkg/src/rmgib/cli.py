"""Command-line harness.

Subcommands: ingest, train, attack, perturb, experiment, grid, scaling,
report. Flags map 1:1 to config keys; ``--config`` loads a JSON document
first and explicit flags override it; ``--seed`` is repeatable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import attacks, harness, trainer
from .config import ExperimentConfig
from .graph import (load_graph, perturb_heterophilic, perturb_random, save_graph,
                    split_nodes)
from .predictor import dump_posteriors, load_posteriors

_SCALAR_FIELDS = {
    "label_rate": float, "val_count": int, "test_count": int, "model": str,
    "hidden_dim": int, "code_dim": int, "embed_dim": int, "layers": int,
    "predictor_variant": str, "beta": float, "gamma": float, "prior_rate": float,
    "threshold": float, "temperature": float, "lr": float, "epochs": int,
    "weight_decay": float, "val_every": int, "mi_epochs": int, "mi_negatives": int,
    "pseudo_fraction": float, "attack_hidden": int, "attack_epochs": int,
    "attack_lr": float, "out_dir": str,
}
_JSON_FIELDS = ("dataset", "perturbation", "mia")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a config JSON document")
    for name, typ in _SCALAR_FIELDS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    for name in _JSON_FIELDS:
        parser.add_argument(f"--{name}", dest=name, type=str,
                            help=f"JSON value for the {name} config key")
    parser.add_argument("--seed", dest="seeds", action="append", type=int,
                        help="run seed (repeatable)")


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    doc = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    for name in _SCALAR_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    for name in _JSON_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = json.loads(value)
    if getattr(args, "seeds", None):
        doc["seeds"] = list(args.seeds)
    return ExperimentConfig.from_dict(doc)


def cmd_ingest(args) -> int:
    try:
        g = load_graph(args.nodes, args.edges)
    except Exception as exc:
        print(f"invalid dataset: {exc}", file=sys.stderr)
        return 1
    print(f"nodes={g.node_count} edges={g.edge_count} "
          f"features={g.feature_dim} classes={g.class_count}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    seed = cfg.seeds[0]
    g = harness.apply_perturbation(harness.load_dataset(cfg), cfg)
    splits = split_nodes(g, cfg.label_rate, cfg.val_count, cfg.test_count, seed=seed)
    run_dir = args.run_dir
    os.makedirs(run_dir, exist_ok=True)
    if cfg.model in ("rmgib", "rmgib_no_s", "rmgib_no_pl"):
        result = trainer.train_rmgib(g, splits, cfg, seed=seed, run_dir=run_dir)
        probs = result.posteriors
    else:
        probs = harness.train_model(g, splits, cfg, seed)
        cfg.to_json(os.path.join(run_dir, "config.json"))
    dump_posteriors(os.path.join(run_dir, "posteriors.json"), probs, splits)
    with open(os.path.join(run_dir, "splits.json"), "w", encoding="utf-8") as fh:
        json.dump({"train": splits.train_ids.tolist(), "val": splits.val_ids.tolist(),
                   "test": splits.test_ids.tolist()}, fh)
    from .predictor import accuracy

    print(f"test_accuracy={accuracy(probs, g.labels, splits.test_ids):.4f}")
    print(f"artifacts written to {run_dir}")
    return 0


def cmd_attack(args) -> int:
    run_dir = args.run_dir
    cfg = ExperimentConfig.from_json(os.path.join(run_dir, "config.json"))
    with open(os.path.join(run_dir, "splits.json"), encoding="utf-8") as fh:
        split_doc = json.load(fh)
    records = load_posteriors(os.path.join(run_dir, "posteriors.json"))
    g = harness.apply_perturbation(harness.load_dataset(cfg), cfg)
    seed = cfg.seeds[0]
    train_ids = np.array(split_doc["train"], dtype=np.int64)
    test_ids = np.array(split_doc["test"], dtype=np.int64)

    from .seeding import derive_rng, derive_seed

    setting = args.setting
    shadow_seed = derive_seed(seed, "mia", setting)
    setup = attacks.build_shadow_setup(g, train_ids, setting, shadow_seed)
    dataset = attacks.train_shadow_and_collect(setup, cfg, seed=shadow_seed)
    atk = attacks.train_attack_model(dataset, cfg, seed=shadow_seed)
    holdout = np.sort(derive_rng(seed, "mia-holdout", setting)
                      .choice(test_ids, size=train_ids.size, replace=False))
    roc = attacks.evaluate_mia(records, train_ids, holdout, atk)
    report_path = os.path.join(run_dir, "attack_report.json")
    attacks.write_attack_report(report_path, setting, roc, int(train_ids.size),
                                int(holdout.size), cfg)
    print(f"{setting} roc_auc={roc:.4f} (report: {report_path})")
    return 0


def cmd_perturb(args) -> int:
    g = load_graph(args.nodes, args.edges)
    if args.kind == "random":
        out = perturb_random(g, args.rate, seed=args.seed)
    elif args.kind == "heterophilic":
        out = perturb_heterophilic(g, args.rate, g.labels, seed=args.seed)
    else:
        out = g
    save_graph(out, args.out_nodes, args.out_edges)
    print(f"edges: {g.edge_count} -> {out.edge_count}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _build_config(args)
    record = harness.run_experiment(cfg)
    print(json.dumps({"config_hash": record.config_hash,
                      "summary": record.summary}, indent=2, sort_keys=True))
    return 0


def cmd_grid(args) -> int:
    cfg = _build_config(args)
    grid = json.loads(args.grid)
    records, best = harness.run_grid(cfg, grid, persist=args.persist)
    print(f"ran {len(records)} grid points")
    print(json.dumps({"best_config_hash": best.config_hash,
                      "best_summary": best.summary}, indent=2, sort_keys=True))
    if args.report_dir:
        harness.emit_report(records, args.report_dir)
        print(f"report written to {args.report_dir}")
    return 0


def cmd_scaling(args) -> int:
    cfg = _build_config(args)
    sizes = [int(tok) for tok in args.sizes.split(",")]
    rows = harness.scaling_probe(sizes, cfg, epochs=args.probe_epochs)
    print(f"{'nodes':>8} {'edges':>8} {'avg_deg':>8} {'sec/epoch':>10}")
    for row in rows:
        print(f"{row['nodes']:>8} {row['edges']:>8} "
              f"{row['avg_degree']:>8.2f} {row['sec_per_epoch']:>10.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


def cmd_report(args) -> int:
    records = [harness.RunRecord.load(path) for path in args.records]
    if args.runs_dir:
        for name in sorted(os.listdir(args.runs_dir)):
            if name.startswith("record_") and name.endswith(".json"):
                records.append(harness.RunRecord.load(os.path.join(args.runs_dir, name)))
    paths = harness.emit_report(records, args.out_dir)
    for path in paths:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmgib")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate dataset files")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train one model and dump artifacts")
    _add_config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack", help="run the MIA pipeline against a run dir")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--setting", choices=["MIA-F", "MIA-S"], default="MIA-F")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("perturb", help="write a perturbed copy of a dataset")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--kind", choices=["none", "random", "heterophilic"],
                   default="random")
    p.add_argument("--rate", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-nodes", required=True)
    p.add_argument("--out-edges", required=True)
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("experiment", help="full pipeline, one config")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("grid", help="cartesian sweep with best-by-validation")
    _add_config_flags(p)
    p.add_argument("--grid", required=True,
                   help='JSON map of key -> values, e.g. {"beta": [0.001, 0.003]}')
    p.add_argument("--persist", action="store_true")
    p.add_argument("--report-dir")
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("scaling", help="per-epoch timing across graph sizes")
    _add_config_flags(p)
    p.add_argument("--sizes", default="500,1000,2000")
    p.add_argument("--probe-epochs", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_scaling)

    p = sub.add_parser("report", help="render summary/trends/plots from records")
    p.add_argument("--records", nargs="*", default=[])
    p.add_argument("--runs-dir")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
