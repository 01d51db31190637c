"""GNN classifier over bottlenecked inputs, plus the reference models.

The predictor is a standard GCN stack (symmetric degree normalization with
self-loops) with SGC and mean-aggregation variants behind the same call.
Reference models: plain whole-graph GCN, GCN+PL (pseudo-label retraining),
and GCN+IB (attribute bottleneck only). The plain GCN doubles as the shadow
model of the attack pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, constant
from .bottlenecks import encode_features, gaussian_kl_terms
from .config import ExperimentConfig
from .graph import Graph, Splits
from .nn import MLP, Adam, ParamSet, init_affine
from .seeding import derive_rng

PROB_TINY = 1e-12


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the epoch index."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class GCNStack:
    """Stacked graph-convolution weights; variant selects the propagation."""

    dims: tuple[int, ...]
    params: ParamSet
    variant: str = "gcn"

    @classmethod
    def create(cls, in_dim: int, out_dim: int, hidden=(256,), seed: int = 0,
               variant: str = "gcn", owner: str = "gcn") -> "GCNStack":
        dims = (in_dim, *hidden, out_dim)
        params = ParamSet(owner=owner)
        rng = derive_rng(seed, "init", owner)
        for i in range(len(dims) - 1):
            init_affine(params, f"layer{i}", dims[i], dims[i + 1], rng)
        return cls(dims=dims, params=params, variant=variant)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1


@dataclass
class Posterior:
    """Class logits and their softmax for one node."""

    logits: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "Posterior":
        logits = np.asarray(logits, dtype=np.float64)
        shift = logits - logits.max()
        e = np.exp(shift)
        return cls(logits=logits, probs=e / e.sum())

    @classmethod
    def from_probs(cls, probs) -> "Posterior":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(logits=np.log(np.maximum(probs, PROB_TINY)), probs=probs)


def normalized_adjacency(adj: np.ndarray, variant: str = "gcn") -> np.ndarray:
    """Self-loop degree normalization of a dense adjacency (ndarray path)."""
    a = np.asarray(adj, dtype=np.float64) + np.eye(adj.shape[0])
    deg = a.sum(axis=1)
    if variant == "mean":
        return a / deg[:, None]
    d = 1.0 / np.sqrt(deg)
    return a * d[:, None] * d[None, :]


def propagate(stack: GCNStack, codes: Tensor, adj_norm) -> Tensor:
    """Run the stack over normalized adjacency: H' = A_hat @ H @ W + b."""
    a = as_tensor(adj_norm)
    h = as_tensor(codes)
    for i in range(stack.n_layers):
        h = a @ h @ stack.params[f"layer{i}.w"] + stack.params[f"layer{i}.b"]
        if stack.variant != "sgc" and i < stack.n_layers - 1:
            h = h.relu()
    return h


def gcn_forward(codes, a_s: np.ndarray, stack: GCNStack) -> Posterior:
    """Posterior of the center node (row 0) on its selected local subgraph."""
    codes = as_tensor(codes)
    a_s = np.asarray(a_s, dtype=np.float64)
    if codes.shape[0] != a_s.shape[0]:
        raise ValueError("codes row count must match the local adjacency")
    if codes.shape[-1] != stack.dims[0]:
        raise ValueError(f"expected code dim {stack.dims[0]}, got {codes.shape[-1]}")
    logits = propagate(stack, codes, constant(normalized_adjacency(a_s, stack.variant)))
    return Posterior.from_logits(logits.data[0])


def classification_loss(posteriors, labels) -> Tensor:
    """Mean negative log-likelihood in nats.

    Accepts a list of Posterior objects (plain evaluation) or a Tensor of
    logits with one row per node (differentiable training path).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if isinstance(posteriors, Tensor):
        logp = posteriors.log_softmax(axis=-1)
        picked = logp[np.arange(labels.size), labels]
        return -picked.mean()
    probs = np.stack([p.probs for p in posteriors])
    picked = np.maximum(probs[np.arange(labels.size), labels], PROB_TINY)
    return constant(-np.mean(np.log(picked)))


def accuracy(probs: np.ndarray, labels: np.ndarray, ids: np.ndarray) -> float:
    if len(ids) == 0:
        return float("nan")
    pred = probs[ids].argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)[ids]))


# -- whole-graph reference models ------------------------------------------------


def _nll_on(logits: Tensor, ids: np.ndarray, labels: np.ndarray) -> Tensor:
    return classification_loss(logits[np.asarray(ids, dtype=np.int64)],
                               np.asarray(labels, dtype=np.int64)[ids])


def _full_posteriors(logits: np.ndarray) -> np.ndarray:
    shift = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shift)
    return e / e.sum(axis=1, keepdims=True)


def baseline_gcn_train(g: Graph, splits: Splits, config: ExperimentConfig,
                       seed: int | None = None,
                       train_ids=None, train_labels=None,
                       ) -> tuple[GCNStack, np.ndarray]:
    """Whole-graph GCN trained with cross-entropy on the labeled set.

    Returns the trained stack and the softmax posteriors for every node.
    Training runs the full epoch budget; final weights are returned (the
    overfit endpoint is what the membership attacks probe).
    """
    seed = config.seeds[0] if seed is None else seed
    ids = np.asarray(splits.train_ids if train_ids is None else train_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty training split")
    labels = g.labels if train_labels is None else np.asarray(train_labels, dtype=np.int64)

    hidden = (config.hidden_dim,) * (config.layers - 1)
    stack = GCNStack.create(g.feature_dim, g.class_count, hidden=hidden,
                            seed=seed, variant=config.predictor_variant, owner="gcn")
    a_hat = constant(normalized_adjacency(g.adjacency, stack.variant))
    x = constant(g.features)
    opt = Adam(stack.params, lr=config.lr, weight_decay=config.weight_decay)
    for epoch in range(config.epochs):
        stack.params.zero_grad()
        logits = propagate(stack, x, a_hat)
        loss = _nll_on(logits, ids, labels)
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(epoch)
        loss.backward()
        opt.step()
    logits = propagate(stack, x, a_hat)
    return stack, _full_posteriors(logits.data)


def gcn_pl_train(g: Graph, splits: Splits, config: ExperimentConfig,
                 seed: int | None = None) -> tuple[GCNStack, np.ndarray]:
    """GCN retrained on its own pseudo labels merged with the given labels."""
    seed = config.seeds[0] if seed is None else seed
    _, probs = baseline_gcn_train(g, splits, config, seed=seed)
    merged = probs.argmax(axis=1)
    merged[splits.train_ids] = g.labels[splits.train_ids]
    all_ids = np.arange(g.node_count, dtype=np.int64)
    return baseline_gcn_train(g, splits, config, seed=seed + 1,
                              train_ids=all_ids, train_labels=merged)


@dataclass
class GcnIbModel:
    """Attribute-bottlenecked GCN: encoder plus propagation stack."""

    f_x: MLP
    stack: GCNStack
    code_dim: int


def gcn_ib_train(g: Graph, splits: Splits, config: ExperimentConfig,
                 seed: int | None = None) -> tuple[GcnIbModel, np.ndarray]:
    """GCN whose inputs pass through the Gaussian attribute bottleneck only.

    Objective: classification NLL on the labeled set plus beta times the
    mean KL of the labeled nodes' codes. No neighbor bottleneck, no pseudo
    labels. Inference is deterministic (code = mu).
    """
    seed = config.seeds[0] if seed is None else seed
    ids = np.asarray(splits.train_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty training split")
    dz = config.code_dim
    f_x = MLP.create(g.feature_dim, 2 * dz, hidden=(config.hidden_dim,),
                     seed=seed, owner="f_x")
    hidden = (config.hidden_dim,) * (config.layers - 1)
    stack = GCNStack.create(dz, g.class_count, hidden=hidden, seed=seed,
                            variant=config.predictor_variant, owner="gcn_ib")
    merged = ParamSet(owner="gcn_ib_model")
    merged.merge(f_x.params, "f_x")
    merged.merge(stack.params, "stack")

    a_hat = constant(normalized_adjacency(g.adjacency, stack.variant))
    opt = Adam(merged, lr=config.lr, weight_decay=config.weight_decay)
    for epoch in range(config.epochs):
        merged.zero_grad()
        noise = derive_rng(seed, "ib-eps", epoch).standard_normal((g.node_count, dz))
        mu, sigma, z = encode_features(g.features, f_x, noise)
        logits = propagate(stack, z, a_hat)
        loss = _nll_on(logits, ids, g.labels)
        if config.beta:
            loss = loss + config.beta * gaussian_kl_terms(mu[ids], sigma[ids]).mean()
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(epoch)
        loss.backward()
        opt.step()

    mu, _, _ = encode_features(g.features, f_x, np.zeros((g.node_count, dz)))
    logits = propagate(stack, mu, a_hat)
    return GcnIbModel(f_x=f_x, stack=stack, code_dim=dz), _full_posteriors(logits.data)


# -- posterior dumps ----------------------------------------------------------------


def split_tags(node_count: int, splits: Splits | None) -> list[str]:
    tags = ["unlabeled"] * node_count
    if splits is not None:
        for i in splits.train_ids:
            tags[int(i)] = "train"
        for i in splits.val_ids:
            tags[int(i)] = "val"
        for i in splits.test_ids:
            tags[int(i)] = "test"
    return tags


def dump_posteriors(path, probs: np.ndarray, splits: Splits | None = None) -> None:
    """One JSON record per node: {node_id, probs, split_tag}."""
    tags = split_tags(probs.shape[0], splits)
    records = [
        {"node_id": int(i), "probs": [float(x) for x in probs[i]], "split_tag": tags[i]}
        for i in range(probs.shape[0])
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh)


def load_posteriors(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
