"""The assembled objective and the two-stage pseudo-label pipeline.

One loss call runs, for every center in the batch: encode attributes of the
center and its K-hop members, score member retention, draw one relaxed
concrete mask per (center, member) pair, gate the local adjacency, and
classify the center through the GCN stack. The four loss terms are combined
as total = L_C + beta * (L_Ix + L_In) + gamma * L_S.

Stage 1 trains on the labeled set and collects pseudo labels for unlabeled
nodes by deterministic inference; stage 2 re-initializes and retrains on the
enlarged label set with the same weights. Inference is always deterministic:
code = mu and hard member masks at probability 0.5.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, constant, scatter
from .bottlenecks import (PROB_FLOOR, bernoulli_kl, encode_features,
                          gaussian_kl_terms, pairwise_probs)
from .config import ExperimentConfig
from .egobatch import EgoBatch, build_ego_batch, spmm
from .graph import Graph, Splits
from .mi import MIEstimator, NeighborPartition, partition_neighbors, train_mi_estimator
from .nn import MLP, Adam, ParamSet, save_params
from .predictor import GCNStack, accuracy
from .seeding import derive_rng, derive_seed


@dataclass
class LossBreakdown:
    """The four loss terms (nats), their weights, and the weighted total.

    ``recombined()`` reproduces ``total`` exactly: the float arithmetic
    mirrors the tensor arithmetic term for term.
    """

    l_c: float
    l_ix: float
    l_in: float
    l_s: float
    beta: float
    gamma: float
    total: float
    total_tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def recombined(self) -> float:
        return self.l_c + self.beta * (self.l_ix + self.l_in) + self.gamma * self.l_s


@dataclass
class PseudoLabelSet:
    """Given labels merged with model-predicted labels for unlabeled nodes."""

    node_ids: np.ndarray
    labels: np.ndarray
    source: np.ndarray    # "given" | "pseudo", aligned with node_ids

    def __post_init__(self):
        if not (len(self.node_ids) == len(self.labels) == len(self.source)):
            raise ValueError("pseudo-label arrays must align")

    def as_dict(self) -> dict[int, int]:
        return {int(i): int(l) for i, l in zip(self.node_ids, self.labels)}

    def given_ids(self) -> np.ndarray:
        return self.node_ids[self.source == "given"]


@dataclass
class RmgibParams:
    """All learnable pieces: attribute encoder, neighbor embedder, classifier."""

    f_x: MLP
    f_n: MLP
    stack: GCNStack
    merged: ParamSet

    @classmethod
    def create(cls, feature_dim: int, class_count: int, config: ExperimentConfig,
               seed: int) -> "RmgibParams":
        dz = config.code_dim
        f_x = MLP.create(feature_dim, 2 * dz, hidden=(config.hidden_dim,),
                         seed=derive_seed(seed, "f_x"), owner="f_x")
        f_n = MLP.create(feature_dim, config.embed_dim, hidden=(config.hidden_dim,),
                         seed=derive_seed(seed, "f_n"), owner="f_n")
        stack = GCNStack.create(dz, class_count,
                                hidden=(config.hidden_dim,) * (config.layers - 1),
                                seed=derive_seed(seed, "f_c"),
                                variant=config.predictor_variant, owner="f_c")
        merged = ParamSet(owner="rmgib")
        merged.merge(f_x.params, "f_x")
        merged.merge(f_n.params, "f_n")
        merged.merge(stack.params, "f_c")
        return cls(f_x=f_x, f_n=f_n, stack=stack, merged=merged)


@dataclass
class TrainContext:
    """Static per-(graph, batch) structures reused across epochs."""

    ego: EgoBatch
    edge_src: np.ndarray
    edge_dst: np.ndarray
    neg_flags: np.ndarray


def build_train_context(g: Graph, node_batch, config: ExperimentConfig,
                        partition: NeighborPartition | None) -> TrainContext:
    ego = build_ego_batch(g, node_batch, config.layers)
    pairs = g.directed_pairs
    src, dst = pairs[:, 0], pairs[:, 1]
    if partition is not None and src.size:
        flags = partition.flags_for(src, dst)
    else:
        flags = np.zeros(src.size)
    return TrainContext(ego=ego, edge_src=src, edge_dst=dst, neg_flags=flags)


def _labels_array(labels, g: Graph, batch: np.ndarray) -> np.ndarray:
    arr = np.full(g.node_count, -1, dtype=np.int64)
    if isinstance(labels, dict):
        if labels:
            keys = np.fromiter(labels.keys(), dtype=np.int64)
            vals = np.fromiter(labels.values(), dtype=np.int64)
            arr[keys] = vals
    else:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (g.node_count,):
            raise ValueError("label array must cover all nodes (or pass a dict)")
        arr[:] = labels
    missing = np.asarray(batch)[arr[np.asarray(batch)] < 0]
    if missing.size:
        raise ValueError(f"missing label for node {int(missing[0])}")
    return arr


def _chunk_logits(chunk, z: Tensor, mask_vals: Tensor, stack: GCNStack) -> Tensor:
    """Logits of every chunk row's center under the gated local adjacency.

    The gated adjacency A_w = adj * (gate gate^T) is never materialized:
    over the flat slot axis, (A_w + I) @ H = gate * (adj @ (gate * H)) + H,
    one sparse matmul per layer.
    """
    t = chunk.n_slots
    mv = mask_vals[chunk.pair_slice]
    gate = (scatter(mv, chunk.member_slots, (t,))
            + constant(chunk.center_onehot)).reshape(t, 1)
    deg = gate * spmm(chunk.adj, gate) + 1.0
    scale = deg ** (-1.0 if stack.variant == "mean" else -0.5)

    def gated_prop(x: Tensor) -> Tensor:
        return gate * spmm(chunk.adj, gate * x) + x

    h = z[chunk.slot_local]
    for i in range(stack.n_layers):
        if stack.variant == "mean":
            h = gated_prop(h) * scale
        else:
            h = gated_prop(h * scale) * scale
        h = h @ stack.params[f"layer{i}.w"] + stack.params[f"layer{i}.b"]
        if stack.variant != "sgc" and i < stack.n_layers - 1:
            h = h.relu()
    return h[chunk.center_pos]


def gib_loss(g: Graph, node_batch, labels, params: RmgibParams,
             config: ExperimentConfig, seed: int,
             partition: NeighborPartition | None = None,
             ctx: TrainContext | None = None) -> LossBreakdown:
    """One full-batch evaluation of the assembled objective.

    A single stochastic draw per encoded node (attribute noise) and per
    (center, member) pair (concrete noise), both streamed from ``seed``.
    The returned breakdown carries the differentiable total tensor.
    """
    batch = np.asarray(node_batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("empty node batch")
    labels_arr = _labels_array(labels, g, batch)
    if ctx is None:
        ctx = build_train_context(g, batch, config, partition)
    ego = ctx.ego
    dz = config.code_dim

    eps = derive_rng(seed, "attr-eps").standard_normal((ego.encode_ids.size, dz))
    mu, sigma, z = encode_features(g.features[ego.encode_ids], params.f_x, eps)
    l_ix = gaussian_kl_terms(mu, sigma).mean()

    h = params.f_n(g.features)

    if ctx.edge_src.size:
        p_edge = pairwise_probs(h, ctx.edge_src, ctx.edge_dst) \
            .clip(PROB_FLOOR, 1.0 - PROB_FLOOR)
        flags = constant(ctx.neg_flags)
        l_s = -((p_edge.log() * (1.0 - flags)).sum()
                + ((1.0 - p_edge).log() * flags).sum()) * (1.0 / g.node_count)
    else:
        l_s = constant(0.0)

    if ego.n_pairs:
        p_pairs = pairwise_probs(h, ego.pair_center, ego.pair_member) \
            .clip(PROB_FLOOR, 1.0 - PROB_FLOOR)
        l_in = bernoulli_kl(p_pairs, config.prior_rate) * (1.0 / batch.size)
        u = derive_rng(seed, "concrete").uniform(size=ego.n_pairs)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        noise = constant(np.log(u) - np.log1p(-u))
        mask_vals = ((p_pairs.log() - (1.0 - p_pairs).log() + noise)
                     * (1.0 / config.temperature)).sigmoid()
    else:
        l_in = constant(0.0)
        mask_vals = constant(np.zeros(0))

    nll_sum = constant(0.0)
    for chunk in ego.chunks:
        logits = _chunk_logits(chunk, z, mask_vals, params.stack)
        logp = logits.log_softmax(axis=-1)
        lbl = labels_arr[chunk.centers]
        nll_sum = nll_sum - logp[np.arange(chunk.centers.size), lbl].sum()
    l_c = nll_sum * (1.0 / batch.size)

    total = l_c + config.beta * (l_ix + l_in) + config.gamma * l_s
    parts = {"l_c": l_c, "l_ix": l_ix, "l_in": l_in, "l_s": l_s, "total": total}
    for name, t in parts.items():
        if not np.isfinite(t.data):
            raise ValueError(f"non-finite loss part {name!r}")
    return LossBreakdown(
        l_c=float(l_c.data), l_ix=float(l_ix.data), l_in=float(l_in.data),
        l_s=float(l_s.data), beta=config.beta, gamma=config.gamma,
        total=float(total.data), total_tensor=total)


def rmgib_posteriors(params: RmgibParams, g: Graph, config: ExperimentConfig,
                     node_ids=None, ego: EgoBatch | None = None) -> np.ndarray:
    """Deterministic inference: code = mu, hard member mask at p > 0.5."""
    ids = np.arange(g.node_count) if node_ids is None else np.asarray(node_ids)
    if ego is None:
        ego = build_ego_batch(g, ids, config.layers)
    dz = config.code_dim
    _, _, z = encode_features(g.features[ego.encode_ids], params.f_x,
                              np.zeros((ego.encode_ids.size, dz)))
    h = params.f_n(g.features)
    if ego.n_pairs:
        p_pairs = pairwise_probs(h, ego.pair_center, ego.pair_member)
        mask_vals = constant((p_pairs.data > 0.5).astype(np.float64))
    else:
        mask_vals = constant(np.zeros(0))
    out = np.zeros((ids.size, g.class_count))
    for chunk in ego.chunks:
        logits = _chunk_logits(chunk, z, mask_vals, params.stack).data
        shift = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shift)
        out[chunk.orig_index] = e / e.sum(axis=1, keepdims=True)
    return out


# -- stages -------------------------------------------------------------------


def _train_stage(g: Graph, batch, labels, config: ExperimentConfig,
                 partition: NeighborPartition | None, seed: int, stage: str,
                 splits: Splits | None = None):
    params = RmgibParams.create(g.feature_dim, g.class_count, config,
                                derive_seed(seed, stage, "init"))
    ctx = build_train_context(g, batch, config, partition)
    val_ego = None
    if splits is not None and len(splits.val_ids):
        val_ego = build_ego_batch(g, splits.val_ids, config.layers)
    opt = Adam(params.merged, lr=config.lr, weight_decay=config.weight_decay)
    best_val, best_values = -np.inf, None
    curve = []
    for epoch in range(config.epochs):
        params.merged.zero_grad()
        lb = gib_loss(g, batch, labels, params, config,
                      derive_seed(seed, stage, "epoch", epoch), ctx=ctx)
        lb.total_tensor.backward()
        opt.step()
        val_acc = None
        if val_ego is not None and (epoch % config.val_every == 0
                                    or epoch == config.epochs - 1):
            probs = rmgib_posteriors(params, g, config, splits.val_ids, ego=val_ego)
            val_acc = float(np.mean(probs.argmax(axis=1) == g.labels[splits.val_ids]))
            if val_acc > best_val:
                best_val = val_acc
                best_values = params.merged.copy_values()
        curve.append({"stage": stage, "epoch": epoch, "l_c": lb.l_c, "l_ix": lb.l_ix,
                      "l_in": lb.l_in, "l_s": lb.l_s, "total": lb.total,
                      "val_acc": val_acc})
    if best_values is not None:
        params.merged.load_values(best_values)
    return params, curve, (best_val if best_values is not None else None)


def stage1_train(g: Graph, splits: Splits, config: ExperimentConfig,
                 partition: NeighborPartition, seed: int | None = None):
    """Train the pseudo-label collector on the given labels only."""
    seed = config.seeds[0] if seed is None else seed
    labels = {int(i): int(l) for i, l in zip(splits.train_ids, splits.train_labels)}
    return _train_stage(g, splits.train_ids, labels, config, partition, seed,
                        "stage1", splits=splits)


def collect_pseudo_labels(params: RmgibParams, g: Graph, splits: Splits,
                          config: ExperimentConfig, seed: int | None = None) -> PseudoLabelSet:
    """Label every unlabeled node with its deterministic argmax prediction.

    Given labels are preserved verbatim. ``pseudo_fraction`` < 1 keeps a
    seeded subset of the unlabeled nodes; an optional confidence floor
    drops low-confidence predictions.
    """
    seed = config.seeds[0] if seed is None else seed
    probs = rmgib_posteriors(params, g, config)
    train = np.asarray(splits.train_ids, dtype=np.int64)
    unlabeled = np.setdiff1d(np.arange(g.node_count), train)
    if config.pseudo_fraction < 1.0 and unlabeled.size:
        keep = int(np.floor(config.pseudo_fraction * unlabeled.size))
        rng = derive_rng(seed, "pseudo-fraction")
        unlabeled = np.sort(rng.choice(unlabeled, size=keep, replace=False))
    if config.pseudo_confidence_min is not None and unlabeled.size:
        conf = probs[unlabeled].max(axis=1)
        unlabeled = unlabeled[conf >= config.pseudo_confidence_min]
    node_ids = np.concatenate([train, unlabeled])
    labels = np.concatenate([
        g.labels[train],
        probs[unlabeled].argmax(axis=1).astype(np.int64),
    ])
    source = np.array(["given"] * train.size + ["pseudo"] * unlabeled.size)
    order = np.argsort(node_ids)
    return PseudoLabelSet(node_ids=node_ids[order], labels=labels[order],
                          source=source[order])


def stage2_train(g: Graph, pl: PseudoLabelSet, config: ExperimentConfig,
                 partition: NeighborPartition, seed: int | None = None,
                 splits: Splits | None = None):
    """Re-initialize and retrain on given plus pseudo labels (same weights)."""
    seed = config.seeds[0] if seed is None else seed
    return _train_stage(g, pl.node_ids, pl.as_dict(), config, partition, seed,
                        "stage2", splits=splits)


# -- orchestration ---------------------------------------------------------------


@dataclass
class RmgibResult:
    params: RmgibParams
    posteriors: np.ndarray
    best_val: float | None
    curve: list
    pseudo: PseudoLabelSet | None
    estimator: MIEstimator
    partition: NeighborPartition
    stage1_params: RmgibParams


def train_rmgib(g: Graph, splits: Splits, config: ExperimentConfig,
                seed: int | None = None, variant: str | None = None,
                run_dir=None, estimator: MIEstimator | None = None,
                partition: NeighborPartition | None = None,
                stage1_params: RmgibParams | None = None) -> RmgibResult:
    """Full pipeline: MI supervisor, stage 1, pseudo labels, stage 2.

    ``variant`` follows the model names: "rmgib", "rmgib_no_s" (gamma forced
    to 0), or "rmgib_no_pl" (stage 1 only). A pre-trained estimator,
    partition, or stage-1 model can be injected to share work across runs.
    """
    seed = config.seeds[0] if seed is None else seed
    variant = variant or config.model
    if variant not in ("rmgib", "rmgib_no_s", "rmgib_no_pl"):
        raise ValueError(f"not a two-stage variant: {variant!r}")
    cfg = config if variant != "rmgib_no_s" else config.replace(gamma=0.0)

    if estimator is None:
        estimator = train_mi_estimator(g, cfg.mi_negatives, cfg,
                                       seed=derive_seed(seed, "mi"))
    if partition is None:
        partition = partition_neighbors(g, estimator)

    curve = []
    if stage1_params is None:
        stage1_params, c1, best_val1 = stage1_train(g, splits, cfg, partition, seed=seed)
        curve.extend(c1)
    else:
        best_val1 = None

    if variant == "rmgib_no_pl":
        final, best_val, pseudo = stage1_params, best_val1, None
    else:
        pseudo = collect_pseudo_labels(stage1_params, g, splits, cfg, seed=seed)
        final, c2, best_val = stage2_train(g, pseudo, cfg, partition, seed=seed,
                                           splits=splits)
        curve.extend(c2)

    posteriors = rmgib_posteriors(final, g, cfg)
    result = RmgibResult(params=final, posteriors=posteriors, best_val=best_val,
                         curve=curve, pseudo=pseudo, estimator=estimator,
                         partition=partition, stage1_params=stage1_params)
    if run_dir is not None:
        write_run_artifacts(run_dir, cfg, result)
    return result


def evaluate_accuracy(posteriors: np.ndarray, g: Graph, ids) -> float:
    return accuracy(posteriors, g.labels, np.asarray(ids, dtype=np.int64))


def write_run_artifacts(run_dir, config: ExperimentConfig, result: RmgibResult) -> None:
    """Run directory: config.json, checkpoints/, pseudo_labels.json, loss_curve.csv."""
    os.makedirs(run_dir, exist_ok=True)
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    config.to_json(os.path.join(run_dir, "config.json"))
    save_params(os.path.join(ckpt_dir, "stage1.json"), result.stage1_params.merged)
    save_params(os.path.join(ckpt_dir, "final.json"), result.params.merged)
    save_params(os.path.join(ckpt_dir, "mi.json"), result.estimator.f_m.params)
    if result.pseudo is not None:
        import json

        with open(os.path.join(run_dir, "pseudo_labels.json"), "w", encoding="utf-8") as fh:
            json.dump([
                {"node_id": int(i), "label": int(l), "source": str(s)}
                for i, l, s in zip(result.pseudo.node_ids, result.pseudo.labels,
                                   result.pseudo.source)
            ], fh)
    with open(os.path.join(run_dir, "loss_curve.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "epoch", "l_c", "l_ix", "l_in", "l_s", "total",
                         "val_acc"])
        for row in result.curve:
            writer.writerow([row["stage"], row["epoch"], f"{row['l_c']:.6f}",
                             f"{row['l_ix']:.6f}", f"{row['l_in']:.6f}",
                             f"{row['l_s']:.6f}", f"{row['total']:.6f}",
                             "" if row["val_acc"] is None else f"{row['val_acc']:.6f}"])
