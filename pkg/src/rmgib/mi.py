"""Noise-contrastive mutual-information scores over linked node pairs.

The estimator embeds raw attributes through an MLP (never adjacency: graph
noise must not contaminate the supervisor) and scores a pair as the logistic
of the embedding inner product. Trained against uniformly sampled negatives,
it partitions each node's neighbors into positives and negatives around a
threshold; the partition supervises the neighbor bottleneck.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, constant
from .config import ExperimentConfig
from .graph import Graph
from .nn import MLP, Adam, mlp_forward
from .predictor import TrainingDivergedError
from .seeding import derive_rng

SCORE_FLOOR = 1e-6


@dataclass
class MIEstimator:
    """Frozen scorer: embedder MLP plus the negative-neighbor threshold."""

    f_m: MLP
    threshold: float = 0.5

    def embed(self, features) -> Tensor:
        return mlp_forward(self.f_m, features)

    def checkpoint_hash(self) -> str:
        h = hashlib.sha256()
        for name in self.f_m.params.names():
            h.update(name.encode())
            h.update(self.f_m.params[name].data.tobytes())
        h.update(repr(self.threshold).encode())
        return h.hexdigest()[:16]


@dataclass
class NeighborPartition:
    """Per-node positive/negative neighbor sets (a true partition)."""

    pos: dict[int, np.ndarray]
    neg: dict[int, np.ndarray]

    def flags_for(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """1.0 where dst is a negative neighbor of src, aligned to the pairs."""
        neg_sets = {v: set(ids.tolist()) for v, ids in self.neg.items()}
        return np.array([
            1.0 if int(d) in neg_sets.get(int(s), ()) else 0.0
            for s, d in zip(src, dst)
        ])


def mi_score(x_v, x_u, est: MIEstimator) -> float:
    """Pairwise score logistic(f_M(x_v) . f_M(x_u)); symmetric in (v, u)."""
    h_v = est.embed(np.asarray(x_v, dtype=np.float64).reshape(1, -1)).data[0]
    h_u = est.embed(np.asarray(x_u, dtype=np.float64).reshape(1, -1)).data[0]
    return float(1.0 / (1.0 + np.exp(-np.dot(h_v, h_u))))


def edge_scores(g: Graph, est: MIEstimator) -> np.ndarray:
    """Scores for every directed pair in g (aligned to g.directed_pairs)."""
    h = est.embed(g.features).data
    pairs = g.directed_pairs
    if pairs.size == 0:
        return np.zeros(0)
    dots = np.sum(h[pairs[:, 0]] * h[pairs[:, 1]], axis=1)
    return 1.0 / (1.0 + np.exp(-np.clip(dots, -500, 500)))


def _sample_negatives(rng: np.random.Generator, src: np.ndarray, n_nodes: int,
                      per_pair: int) -> np.ndarray:
    """Uniform negatives, resampled wherever they collide with the source."""
    neg = rng.integers(0, n_nodes, size=(src.size, per_pair))
    while True:
        clash = neg == src[:, None]
        if not clash.any():
            return neg
        neg[clash] = rng.integers(0, n_nodes, size=int(clash.sum()))


def contrastive_loss(f_m: MLP, features: np.ndarray, src: np.ndarray,
                     dst: np.ndarray, neg: np.ndarray, node_count: int) -> Tensor:
    """Mean over nodes and neighbors of -log s_vu - E_n[log(1 - s_vn)]."""
    h = mlp_forward(f_m, features)
    s_pos = (h[src] * h[dst]).sum(axis=1).sigmoid().clip(SCORE_FLOOR, 1 - SCORE_FLOOR)
    neg_term = constant(0.0)
    per_pair = neg.shape[1]
    for k in range(per_pair):
        s_neg = (h[src] * h[neg[:, k]]).sum(axis=1).sigmoid() \
            .clip(SCORE_FLOOR, 1 - SCORE_FLOOR)
        neg_term = neg_term + (1.0 - s_neg).log().sum()
    return (-(s_pos.log().sum()) - neg_term * (1.0 / per_pair)) * (1.0 / node_count)


def train_mi_estimator(g: Graph, negatives_per_edge: int,
                       config: ExperimentConfig, seed: int | None = None) -> MIEstimator:
    """Contrastive training: push linked-pair scores up, random-pair scores down.

    Minimizes the mean over nodes and their neighbors of
    -log s_vu - E_n[log(1 - s_vn)] with negatives drawn uniformly (excluding
    the source node itself), resampled every step. Deterministic given seed.
    """
    if g.edge_count < 1:
        raise ValueError("graph must have at least one edge")
    if negatives_per_edge < 1:
        raise ValueError("negatives_per_edge must be at least 1")
    seed = config.seeds[0] if seed is None else seed
    f_m = MLP.create(g.feature_dim, config.embed_dim, hidden=(config.hidden_dim,),
                     seed=seed, owner="f_m")
    pairs = g.directed_pairs
    src, dst = pairs[:, 0], pairs[:, 1]
    opt = Adam(f_m.params, lr=config.lr, weight_decay=config.weight_decay)
    for epoch in range(config.mi_epochs):
        f_m.params.zero_grad()
        rng = derive_rng(seed, "mi-negatives", epoch)
        neg = _sample_negatives(rng, src, g.node_count, negatives_per_edge)
        loss = contrastive_loss(f_m, g.features, src, dst, neg, g.node_count)
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(epoch)
        loss.backward()
        opt.step()
    return MIEstimator(f_m=f_m, threshold=config.threshold)


def partition_neighbors(g: Graph, est: MIEstimator) -> NeighborPartition:
    """Negative neighbors are those scoring below the threshold."""
    scores = edge_scores(g, est)
    pairs = g.directed_pairs
    pos: dict[int, list] = {v: [] for v in range(g.node_count)}
    neg: dict[int, list] = {v: [] for v in range(g.node_count)}
    for (v, u), s in zip(pairs, scores):
        (neg if s < est.threshold else pos)[int(v)].append(int(u))
    return NeighborPartition(
        pos={v: np.array(sorted(ids), dtype=np.int64) for v, ids in pos.items()},
        neg={v: np.array(sorted(ids), dtype=np.int64) for v, ids in neg.items()},
    )


def self_supervision_loss(probs_by_node: dict[int, Tensor],
                          partition: NeighborPartition, node_count: int | None = None,
                          neighbor_ids: dict[int, np.ndarray] | None = None) -> Tensor:
    """Supervision of the neighbor bottleneck by the frozen partition.

    ``probs_by_node[v]`` holds retention probabilities for v's 1-hop
    neighbors in ascending neighbor-id order (pass ``neighbor_ids`` to
    override the ordering). Mean over nodes of the cross-entropy pulling
    positives toward 1 and negatives toward 0.
    """
    nodes = sorted(set(partition.pos) | set(partition.neg))
    if node_count is None:
        node_count = len(nodes)
    total = constant(0.0)
    for v in nodes:
        pos = partition.pos.get(v, np.zeros(0, dtype=np.int64))
        neg = partition.neg.get(v, np.zeros(0, dtype=np.int64))
        if pos.size + neg.size == 0:
            continue
        if v not in probs_by_node:
            raise ValueError(f"probability map missing node {v}")
        p = as_tensor(probs_by_node[v]).clip(1e-6, 1 - 1e-6)
        order = neighbor_ids[v] if neighbor_ids is not None else \
            np.sort(np.concatenate([pos, neg]))
        if p.data.size != order.size:
            raise ValueError(f"probability vector for node {v} does not cover its neighbors")
        is_neg = np.isin(order, neg).astype(np.float64)
        total = total - (p.log() * constant(1.0 - is_neg)).sum() \
            - ((1.0 - p).log() * constant(is_neg)).sum()
    return total * (1.0 / node_count)


# -- partition cache -----------------------------------------------------------------


def save_partition(path, partition: NeighborPartition, est: MIEstimator,
                   g: Graph) -> None:
    doc = {
        "estimator_hash": est.checkpoint_hash(),
        "graph_hash": g.content_hash(),
        "nodes": {
            str(v): {
                "pos": partition.pos.get(v, np.zeros(0, dtype=np.int64)).tolist(),
                "neg": partition.neg.get(v, np.zeros(0, dtype=np.int64)).tolist(),
            }
            for v in range(g.node_count)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_partition(path, g: Graph, est: MIEstimator | None = None) -> NeighborPartition:
    """Load a cached partition; raises if the graph (or estimator) changed."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc["graph_hash"] != g.content_hash():
        raise ValueError("partition cache invalidated: graph changed")
    if est is not None and doc["estimator_hash"] != est.checkpoint_hash():
        raise ValueError("partition cache invalidated: estimator changed")
    pos = {int(v): np.array(e["pos"], dtype=np.int64) for v, e in doc["nodes"].items()}
    neg = {int(v): np.array(e["neg"], dtype=np.int64) for v, e in doc["nodes"].items()}
    return NeighborPartition(pos=pos, neg=neg)
