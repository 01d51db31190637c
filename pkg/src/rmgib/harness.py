"""Experiment orchestration: single runs, grids, reports, scaling probes.

A run loads or generates the graph, optionally perturbs it, trains the
selected model per seed, evaluates test accuracy, and (optionally) runs the
membership-inference pipeline. Records persist as JSON and are bit-for-bit
reproducible from their stored config plus seeds.
"""

from __future__ import annotations

import itertools
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import attacks, trainer
from .config import BETA_GRID, GAMMA_GRID, ExperimentConfig
from .graph import (Graph, Splits, generate_sbm, load_graph, perturb_heterophilic,
                    perturb_random, split_nodes)
from .predictor import accuracy, baseline_gcn_train, gcn_ib_train, gcn_pl_train
from .seeding import derive_rng, derive_seed

METRIC_KEYS = ("accuracy", "val_accuracy", "mia_f_roc", "mia_s_roc",
               "targeted_accuracy")


class StageError(RuntimeError):
    """An experiment stage failed; carries the stage tag."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[stage:{stage}] {cause}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class RunRecord:
    """Per-seed metrics and their mean/std for one resolved configuration."""

    config: dict
    config_hash: str
    per_seed: list
    summary: dict
    wall_clock_sec: float
    node_count: int

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "per_seed": self.per_seed,
            "summary": self.summary,
            "wall_clock_sec": self.wall_clock_sec,
            "node_count": self.node_count,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        return cls(**doc)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunRecord":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def runs_dir(cfg: ExperimentConfig) -> str:
    return cfg.out_dir or os.environ.get("RMGIB_RUNS_DIR", "runs")


def load_dataset(cfg: ExperimentConfig) -> Graph:
    ds = cfg.dataset
    kind = ds.get("kind")
    if kind == "tsv":
        return load_graph(ds["nodes"], ds["edges"])
    if kind == "sbm":
        return generate_sbm(ds["block_sizes"], ds["p_in"], ds["p_out"],
                            ds["feature_dim"], ds["feature_signal"],
                            seed=ds.get("seed", 0))
    raise ValueError(f"unknown dataset kind {kind!r}")


def apply_perturbation(g: Graph, cfg: ExperimentConfig) -> Graph:
    """Structure attack at the configured budget; fixed across run seeds."""
    kind = cfg.perturbation.get("kind", "none")
    rate = float(cfg.perturbation.get("rate", 0.0))
    seed = int(cfg.perturbation.get("seed", cfg.dataset.get("seed", 0)))
    if kind == "none" or rate == 0.0:
        return g
    if kind == "random":
        return perturb_random(g, rate, seed=seed)
    return perturb_heterophilic(g, rate, g.labels, seed=seed)


def _touched_nodes(clean: Graph, perturbed: Graph) -> np.ndarray:
    """Nodes incident to any flipped edge."""
    a = clean.edge_codes()
    b = perturbed.edge_codes()
    diff = a.symmetric_difference(b)
    n = clean.node_count
    nodes = set()
    for code in diff:
        nodes.add(code // n)
        nodes.add(code % n)
    return np.array(sorted(nodes), dtype=np.int64)


def train_model(g: Graph, splits: Splits, cfg: ExperimentConfig,
                seed: int) -> np.ndarray:
    """Dispatch on cfg.model; returns deterministic posteriors for all nodes."""
    if cfg.model == "gcn":
        _, probs = baseline_gcn_train(g, splits, cfg, seed=seed)
    elif cfg.model == "gcn_pl":
        _, probs = gcn_pl_train(g, splits, cfg, seed=seed)
    elif cfg.model == "gcn_ib":
        _, probs = gcn_ib_train(g, splits, cfg, seed=seed)
    else:
        result = trainer.train_rmgib(g, splits, cfg, seed=seed, variant=cfg.model)
        probs = result.posteriors
    return probs


def run_mia(g: Graph, splits: Splits, probs: np.ndarray, cfg: ExperimentConfig,
            setting: str, seed: int) -> float:
    shadow_seed = derive_seed(seed, "mia", setting)
    setup = attacks.build_shadow_setup(g, splits.train_ids, setting, shadow_seed)
    dataset = attacks.train_shadow_and_collect(setup, cfg, seed=shadow_seed)
    atk = attacks.train_attack_model(dataset, cfg, seed=shadow_seed)
    holdout_rng = derive_rng(seed, "mia-holdout", setting)
    if splits.test_ids.size < splits.train_ids.size:
        raise ValueError("not enough test nodes for a size-matched holdout")
    holdout = np.sort(holdout_rng.choice(splits.test_ids,
                                         size=splits.train_ids.size, replace=False))
    return attacks.evaluate_mia(probs, splits.train_ids, holdout, atk)


def run_single(cfg: ExperimentConfig, seed: int, clean: Graph | None = None) -> dict:
    """One seed of the full pipeline; returns the per-seed metric dict."""
    with _stage("dataset"):
        g_clean = load_dataset(cfg) if clean is None else clean
    with _stage("perturb"):
        g = apply_perturbation(g_clean, cfg)
    with _stage("split"):
        splits = split_nodes(g, cfg.label_rate, cfg.val_count, cfg.test_count,
                             seed=seed)
    with _stage("train"):
        probs = train_model(g, splits, cfg, seed)
    metrics: dict = {"seed": int(seed)}
    with _stage("evaluate"):
        metrics["accuracy"] = accuracy(probs, g.labels, splits.test_ids)
        metrics["val_accuracy"] = accuracy(probs, g.labels, splits.val_ids)
        if g is not g_clean:
            touched = _touched_nodes(g_clean, g)
            touched_test = np.intersect1d(touched, splits.test_ids)
            if touched_test.size:
                metrics["targeted_accuracy"] = accuracy(probs, g.labels, touched_test)
    for setting in cfg.mia:
        with _stage(f"attack[{setting}]"):
            key = "mia_f_roc" if setting == "MIA-F" else "mia_s_roc"
            metrics[key] = run_mia(g, splits, probs, cfg, setting, seed)
    return metrics


def _summarize(per_seed: list) -> dict:
    summary = {}
    for key in METRIC_KEYS:
        values = [m[key] for m in per_seed if key in m and m[key] == m[key]]
        if not values:
            continue
        mean = float(np.mean(values))
        std = float(np.std(values)) if len(values) >= 2 else None
        summary[key] = {"mean": mean, "std": std, "n": len(values)}
    return summary


def run_experiment(cfg: ExperimentConfig, persist: bool = True) -> RunRecord:
    """Run every seed, aggregate mean/std, optionally persist the record."""
    start = time.perf_counter()
    with _stage("dataset"):
        clean = load_dataset(cfg)
    per_seed = [run_single(cfg, seed, clean=clean) for seed in cfg.seeds]
    record = RunRecord(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        per_seed=per_seed,
        summary=_summarize(per_seed),
        wall_clock_sec=time.perf_counter() - start,
        node_count=clean.node_count,
    )
    if persist:
        out = runs_dir(cfg)
        os.makedirs(out, exist_ok=True)
        record.save(os.path.join(out, f"record_{record.config_hash}.json"))
    return record


def rerun_record(record: RunRecord) -> RunRecord:
    """Replay a persisted record's config + seeds (reproducibility audit)."""
    cfg = ExperimentConfig.from_dict(record.config)
    return run_experiment(cfg, persist=False)


def run_grid(base_cfg: ExperimentConfig, grid: dict,
             persist: bool = False) -> tuple[list, RunRecord]:
    """Cartesian sweep; selection is by mean validation accuracy only.

    With grid mode on, beta/gamma values outside the canonical grids are
    rejected. Ties break on the config hash so ordering cannot matter.
    """
    if not grid:
        raise ValueError("empty grid")
    keys = sorted(grid)
    for key in keys:
        if not list(grid[key]):
            raise ValueError(f"empty grid for key {key!r}")
        if base_cfg.grid_mode and key == "beta":
            bad = [v for v in grid[key] if v not in BETA_GRID]
            if bad:
                raise ValueError(f"beta values {bad} are not in the grid {BETA_GRID}")
        if base_cfg.grid_mode and key == "gamma":
            bad = [v for v in grid[key] if v not in GAMMA_GRID]
            if bad:
                raise ValueError(f"gamma values {bad} are not in the grid {GAMMA_GRID}")
    records = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = base_cfg.replace(**dict(zip(keys, combo)))
        records.append(run_experiment(cfg, persist=persist))
    best = select_best(records)
    return records, best


def select_best(records: list) -> RunRecord:
    """Highest mean validation accuracy; deterministic hash tie-break.

    Only validation metrics are consulted — test metrics never influence
    selection.
    """
    def key(rec: RunRecord):
        val = rec.summary.get("val_accuracy", {}).get("mean", float("-inf"))
        return (-val, rec.config_hash)

    return sorted(records, key=key)[0]


# -- reporting -----------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def emit_report(records: list, out_dir) -> list:
    """Write summary.csv, trends.json, and static SVG plots; returns paths."""
    if not records:
        raise ValueError("no records to report")
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    rows = []
    for rec in records:
        cfg = rec.config
        s = rec.summary
        rows.append({
            "model": cfg["model"],
            "perturbation_kind": cfg["perturbation"].get("kind", "none"),
            "perturbation_rate": cfg["perturbation"].get("rate", 0.0),
            "label_rate": cfg["label_rate"],
            "beta": cfg["beta"],
            "gamma": cfg["gamma"],
            "accuracy_mean": s.get("accuracy", {}).get("mean"),
            "accuracy_std": s.get("accuracy", {}).get("std"),
            "mia_f_roc_mean": s.get("mia_f_roc", {}).get("mean"),
            "mia_f_roc_std": s.get("mia_f_roc", {}).get("std"),
            "mia_s_roc_mean": s.get("mia_s_roc", {}).get("mean"),
            "mia_s_roc_std": s.get("mia_s_roc", {}).get("std"),
            "config_hash": rec.config_hash,
        })
    rows.sort(key=lambda r: (r["model"], r["perturbation_kind"],
                             str(r["perturbation_rate"]), str(r["label_rate"]),
                             r["config_hash"]))
    summary_path = os.path.join(out_dir, "summary.csv")
    header = list(rows[0].keys())
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for key in header:
                v = row[key]
                cells.append(_fmt(v) if isinstance(v, float) else ("" if v is None else str(v)))
            fh.write(",".join(cells) + "\n")
    paths.append(summary_path)

    by_model: dict = {}
    for row in rows:
        by_model.setdefault(row["model"], []).append(row)
    label_trends, annotations = {}, []
    for model, mrows in sorted(by_model.items()):
        pts = sorted({r["label_rate"] for r in mrows})
        series = []
        for rate in pts:
            matching = [r for r in mrows if r["label_rate"] == rate]
            series.append({
                "label_rate": rate,
                "accuracy_mean": matching[0]["accuracy_mean"],
                "mia_f_roc_mean": matching[0]["mia_f_roc_mean"],
                "mia_s_roc_mean": matching[0]["mia_s_roc_mean"],
            })
        label_trends[model] = series
        rocs = [(s["label_rate"], s["mia_f_roc_mean"]) for s in series
                if s["mia_f_roc_mean"] is not None]
        if len(rocs) >= 2:
            lo, hi = rocs[0], rocs[-1]
            annotations.append({
                "model": model,
                "metric": "mia_f_roc",
                "low_rate": lo[0], "high_rate": hi[0],
                "roc_at_low_rate": lo[1], "roc_at_high_rate": hi[1],
                "decreasing": bool(hi[1] < lo[1]),
            })
    sweep = [{"beta": r["beta"], "gamma": r["gamma"],
              "accuracy_mean": r["accuracy_mean"],
              "mia_f_roc_mean": r["mia_f_roc_mean"]} for r in rows]
    trends_path = os.path.join(out_dir, "trends.json")
    with open(trends_path, "w", encoding="utf-8") as fh:
        json.dump({"label_rate": label_trends, "annotations": annotations,
                   "beta_gamma": sweep}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(trends_path)

    paths.extend(_emit_plots(label_trends, sweep, out_dir))
    return paths


def _emit_plots(label_trends: dict, sweep: list, out_dir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "rmgib-report"
    paths = []

    multi = {m: s for m, s in label_trends.items() if len(s) >= 2}
    if multi:
        for metric, fname in (("mia_f_roc_mean", "label_rate_mia_roc.svg"),
                              ("accuracy_mean", "label_rate_accuracy.svg")):
            fig, ax = plt.subplots(figsize=(5, 3.4))
            plotted = False
            for model, series in sorted(multi.items()):
                xs = [s["label_rate"] for s in series if s[metric] is not None]
                ys = [s[metric] for s in series if s[metric] is not None]
                if len(xs) >= 2:
                    ax.plot(xs, ys, marker="o", label=model)
                    plotted = True
            if plotted:
                ax.set_xlabel("label rate")
                ax.set_ylabel(metric.replace("_mean", ""))
                ax.legend()
                fig.tight_layout()
                path = os.path.join(out_dir, fname)
                fig.savefig(path, metadata={"Date": None})
                paths.append(path)
            plt.close(fig)

    betas = sorted({s["beta"] for s in sweep})
    gammas = sorted({s["gamma"] for s in sweep})
    if len(betas) >= 2 and len(gammas) >= 2:
        for metric, fname in (("accuracy_mean", "beta_gamma_accuracy.svg"),
                              ("mia_f_roc_mean", "beta_gamma_mia_roc.svg")):
            grid = np.full((len(gammas), len(betas)), np.nan)
            for s in sweep:
                if s[metric] is not None:
                    grid[gammas.index(s["gamma"]), betas.index(s["beta"])] = s[metric]
            if np.all(np.isnan(grid)):
                continue
            fig, ax = plt.subplots(figsize=(5, 3.8))
            im = ax.imshow(grid, origin="lower", aspect="auto")
            ax.set_xticks(range(len(betas)), [str(b) for b in betas], rotation=45)
            ax.set_yticks(range(len(gammas)), [str(g) for g in gammas])
            ax.set_xlabel("beta")
            ax.set_ylabel("gamma")
            fig.colorbar(im, ax=ax, label=metric.replace("_mean", ""))
            fig.tight_layout()
            path = os.path.join(out_dir, fname)
            fig.savefig(path, metadata={"Date": None})
            paths.append(path)
            plt.close(fig)
    return paths


# -- scaling ---------------------------------------------------------------------


def scaling_probe(sizes: list, base_cfg: ExperimentConfig, epochs: int = 3) -> list:
    """Per-epoch wall-clock of the two-stage trainer across graph sizes.

    Graphs are SBM samples at a fixed expected degree (the generator scales
    the block probabilities down as blocks grow). Raises if the realized
    average degree drifts more than 10% across sizes.
    """
    ds = base_cfg.dataset
    if ds.get("kind") != "sbm":
        raise ValueError("scaling probe requires a synthetic (sbm) dataset")
    n_blocks = len(ds["block_sizes"])
    b0 = ds["block_sizes"][0]
    n0 = sum(ds["block_sizes"])
    deg_in = ds["p_in"] * (b0 - 1)
    deg_out = ds["p_out"] * (n0 - b0)

    rows = []
    for n in sizes:
        block = n // n_blocks
        p_in = min(1.0, deg_in / max(block - 1, 1))
        p_out = min(1.0, deg_out / max(n - block, 1))
        g = generate_sbm([block] * n_blocks, p_in, p_out, ds["feature_dim"],
                         ds["feature_signal"], seed=ds.get("seed", 0))
        seed = base_cfg.seeds[0]
        cfg = base_cfg.replace(dataset=dict(ds, block_sizes=[block] * n_blocks,
                                            p_in=p_in, p_out=p_out))
        from .mi import partition_neighbors, train_mi_estimator

        est = train_mi_estimator(g, cfg.mi_negatives,
                                 cfg.replace(mi_epochs=min(cfg.mi_epochs, 20)),
                                 seed=derive_seed(seed, "mi"))
        partition = partition_neighbors(g, est)
        params = trainer.RmgibParams.create(g.feature_dim, g.class_count, cfg,
                                            derive_seed(seed, "scaling", "init"))
        everyone = np.arange(g.node_count)
        ctx = trainer.build_train_context(g, everyone, cfg, partition)
        from .nn import Adam

        opt = Adam(params.merged, lr=cfg.lr)
        times = []
        for epoch in range(epochs + 1):
            t0 = time.perf_counter()
            params.merged.zero_grad()
            lb = trainer.gib_loss(g, everyone, g.labels, params, cfg,
                                  derive_seed(seed, "scaling", epoch), ctx=ctx)
            lb.total_tensor.backward()
            opt.step()
            if epoch > 0:  # first epoch warms caches
                times.append(time.perf_counter() - t0)
        rows.append({
            "nodes": int(g.node_count),
            "edges": int(g.edge_count),
            "avg_degree": 2.0 * g.edge_count / g.node_count,
            "sec_per_epoch": float(np.median(times)),
        })
    degrees = [r["avg_degree"] for r in rows]
    if max(degrees) > 1.1 * min(degrees):
        raise RuntimeError(f"average degree drifted across sizes: {degrees}")
    return rows
