"""Black-box membership inference: shadow training, attack model, ROC.

The attacker sees only posterior vectors. A shadow GCN is trained on nodes
disjoint from the target's training set (full graph for MIA-F, a 50% induced
subgraph for MIA-S); its member/non-member posteriors train a small MLP
classifier, which is then scored against the target's posterior dump with
rank-statistic ROC-AUC (ties count one half).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import constant
from .config import ExperimentConfig
from .graph import Graph, Splits, subsample_graph
from .nn import MLP, Adam, mlp_forward
from .predictor import TrainingDivergedError, baseline_gcn_train
from .seeding import derive_rng, derive_seed


@dataclass
class ShadowSetup:
    """Shadow graph plus disjoint in/out node sets, sized like the target's."""

    graph: Graph
    in_ids: np.ndarray            # shadow-model training nodes (members)
    out_ids: np.ndarray           # held-out nodes (non-members)
    original_ids: np.ndarray      # shadow node id -> id in the target graph
    setting: str

    def __post_init__(self):
        if set(self.in_ids.tolist()) & set(self.out_ids.tolist()):
            raise ValueError("shadow in/out sets must be disjoint")


@dataclass
class AttackDataset:
    """Posterior vectors labeled 1 for members, 0 for non-members."""

    posteriors: np.ndarray   # (n, C)
    membership: np.ndarray   # (n,) 0/1

    def __post_init__(self):
        if self.posteriors.shape[0] != self.membership.size:
            raise ValueError("posterior/label count mismatch")

    def class_balance(self) -> tuple[int, int]:
        ones = int(self.membership.sum())
        return ones, int(self.membership.size - ones)


@dataclass
class AttackModel:
    """Binary MLP over posterior vectors; higher score = more member-like."""

    f_a: MLP
    sorted_inputs: bool = False

    def scores(self, posteriors: np.ndarray) -> np.ndarray:
        x = np.asarray(posteriors, dtype=np.float64)
        if self.sorted_inputs:
            x = np.sort(x, axis=1)[:, ::-1]
        logits = mlp_forward(self.f_a, x).data.reshape(-1)
        return 1.0 / (1.0 + np.exp(-np.clip(logits, -500, 500)))


def roc_auc(scores, labels) -> float:
    """Rank-statistic area under the ROC curve; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def build_shadow_setup(g: Graph, target_train_ids, setting: str,
                       seed: int) -> ShadowSetup:
    """Sample a shadow world whose labeled set avoids the target's members.

    MIA-F keeps the whole graph; MIA-S works on a 50% induced subgraph.
    |in_ids| matches the target training-set size, and out_ids are a
    size-matched disjoint sample of the remaining shadow nodes.
    """
    if setting not in ("MIA-F", "MIA-S"):
        raise ValueError(f"unknown MIA setting {setting!r}")
    target_train = np.asarray(target_train_ids, dtype=np.int64)
    size = target_train.size
    if setting == "MIA-F":
        shadow, original = g, np.arange(g.node_count, dtype=np.int64)
    else:
        shadow, original = subsample_graph(g, 0.5, seed=derive_seed(seed, "mia-subgraph"))

    forbidden = set(target_train.tolist())
    eligible = np.array([i for i in range(shadow.node_count)
                         if int(original[i]) not in forbidden], dtype=np.int64)
    if eligible.size < size:
        raise ValueError("not enough nodes outside the target training set")
    rng = derive_rng(seed, "shadow-in")
    in_ids = np.sort(rng.choice(eligible, size=size, replace=False))
    rest = np.setdiff1d(np.arange(shadow.node_count), in_ids)
    if rest.size < size:
        raise ValueError("not enough shadow nodes for a size-matched out set")
    out_rng = derive_rng(seed, "shadow-out")
    out_ids = np.sort(out_rng.choice(rest, size=size, replace=False))
    return ShadowSetup(graph=shadow, in_ids=in_ids, out_ids=out_ids,
                       original_ids=original, setting=setting)


def train_shadow_and_collect(setup: ShadowSetup, config: ExperimentConfig,
                             seed: int | None = None) -> AttackDataset:
    """Train the shadow GCN on its in-set, then query both sides."""
    seed = config.seeds[0] if seed is None else seed
    g = setup.graph
    splits = Splits(train_ids=setup.in_ids, val_ids=np.zeros(0, dtype=np.int64),
                    test_ids=np.zeros(0, dtype=np.int64),
                    train_labels=g.labels[setup.in_ids])
    _, probs = baseline_gcn_train(g, splits, config, seed=derive_seed(seed, "shadow"))
    posteriors = np.concatenate([probs[setup.in_ids], probs[setup.out_ids]])
    membership = np.concatenate([np.ones(setup.in_ids.size),
                                 np.zeros(setup.out_ids.size)])
    return AttackDataset(posteriors=posteriors, membership=membership)


def train_attack_model(dataset: AttackDataset, config: ExperimentConfig,
                       seed: int | None = None) -> AttackModel:
    """Fit the binary attack classifier with cross-entropy."""
    ones, zeros = dataset.class_balance()
    if ones == 0 or zeros == 0:
        raise ValueError("attack dataset must contain both classes")
    seed = config.seeds[0] if seed is None else seed
    x = dataset.posteriors
    if config.attack_sorted_posteriors:
        x = np.sort(x, axis=1)[:, ::-1]
    f_a = MLP.create(x.shape[1], 1, hidden=(config.attack_hidden,),
                     seed=derive_seed(seed, "attack"), owner="f_a")
    y = constant(dataset.membership.reshape(-1, 1))
    opt = Adam(f_a.params, lr=config.attack_lr)
    xs = constant(x)
    for epoch in range(config.attack_epochs):
        f_a.params.zero_grad()
        p = mlp_forward(f_a, xs).sigmoid().clip(1e-9, 1 - 1e-9)
        loss = -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean()
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(epoch)
        loss.backward()
        opt.step()
    return AttackModel(f_a=f_a, sorted_inputs=config.attack_sorted_posteriors)


def _posterior_matrix(target_posteriors, ids: np.ndarray) -> np.ndarray:
    """Rows for ``ids`` out of a posterior dump (records, mapping, or matrix)."""
    if isinstance(target_posteriors, np.ndarray):
        return target_posteriors[ids]
    if isinstance(target_posteriors, dict):
        return np.stack([np.asarray(target_posteriors[int(i)], dtype=np.float64)
                         for i in ids])
    by_id = {int(rec["node_id"]): rec["probs"] for rec in target_posteriors}
    return np.stack([np.asarray(by_id[int(i)], dtype=np.float64) for i in ids])


def evaluate_mia(target_posteriors, target_train_ids, holdout_ids,
                 atk: AttackModel) -> float:
    """Attack ROC against a target's posterior dump (black-box only).

    Members are the target's training nodes; non-members are a size-matched
    disjoint holdout. Only posteriors cross this interface — never model
    parameters.
    """
    members = np.asarray(target_train_ids, dtype=np.int64)
    holdout = np.asarray(holdout_ids, dtype=np.int64)
    if members.size == 0 or holdout.size == 0:
        raise ValueError("both member and holdout sides must be nonempty")
    if set(members.tolist()) & set(holdout.tolist()):
        raise ValueError("holdout ids must be disjoint from the members")
    rows = np.concatenate([members, holdout])
    scores = atk.scores(_posterior_matrix(target_posteriors, rows))
    labels = np.concatenate([np.ones(members.size), np.zeros(holdout.size)])
    return roc_auc(scores, labels)


def write_attack_report(path, setting: str, roc: float, n_members: int,
                        n_nonmembers: int, config: ExperimentConfig) -> None:
    doc = {
        "setting": setting,
        "roc_auc": roc,
        "n_members": n_members,
        "n_nonmembers": n_nonmembers,
        "attacker_config_hash": config.config_hash(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
