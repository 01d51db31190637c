"""Graph container, dataset ingestion, synthetic generation, and perturbations.

Graphs are immutable undirected simple graphs: canonical edge array with
u < v, no self-loops, no duplicates. All generators and perturbations are
pure functions of (inputs, seed) and return new Graph objects.

File formats (UTF-8, ``#`` comment lines ignored):

* nodes.tsv — ``node_id<TAB>label<TAB>f1,f2,...,fD`` with ids 0..N-1 contiguous
* edges.tsv — ``src<TAB>dst`` (directed duplicates are symmetrized away)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .seeding import derive_rng

logger = logging.getLogger(__name__)


class GraphParseError(ValueError):
    """Malformed dataset line; carries the 1-based line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class GraphValidationError(ValueError):
    pass


def _canonical_edges(edges: np.ndarray) -> np.ndarray:
    """Sort endpoints within rows, drop self-loops/duplicates, lexsort rows."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size == 0:
        return edges.reshape(0, 2)
    lo = edges.min(axis=1)
    hi = edges.max(axis=1)
    keep = lo != hi
    pairs = np.stack([lo[keep], hi[keep]], axis=1)
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    return np.unique(pairs, axis=0)


@dataclass(frozen=True)
class Graph:
    """Immutable node/edge/attribute/label container."""

    node_count: int
    edges: np.ndarray          # (E, 2) canonical: u < v, lexsorted, unique
    features: np.ndarray       # (N, D) float64
    labels: np.ndarray         # (N,) int64 in [0, class_count)
    class_count: int

    def __post_init__(self):
        edges = _canonical_edges(self.edges)
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != self.node_count:
            raise GraphValidationError("features must be (node_count, feature_dim)")
        if labels.shape != (self.node_count,):
            raise GraphValidationError("labels length must equal node_count")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise GraphValidationError("labels must be class ids in [0, class_count)")
        if edges.size and (edges.min() < 0 or edges.max() >= self.node_count):
            raise GraphValidationError("edge endpoint out of range")
        features.setflags(write=False)
        labels.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency with zero diagonal."""
        a = np.zeros((self.node_count, self.node_count))
        if self.edge_count:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        a.setflags(write=False)
        return a

    @cached_property
    def neighbor_lists(self) -> tuple[np.ndarray, ...]:
        """Sorted 1-hop neighbor ids per node."""
        buckets: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            buckets[u].append(int(v))
            buckets[v].append(int(u))
        return tuple(np.array(sorted(b), dtype=np.int64) for b in buckets)

    @cached_property
    def directed_pairs(self) -> np.ndarray:
        """(2E, 2) array with both orientations of every edge."""
        if not self.edge_count:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate([self.edges, self.edges[:, ::-1]], axis=0)

    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbor_lists], dtype=np.int64)

    def edge_codes(self) -> set[int]:
        """Edges as u * N + v codes (u < v), for fast membership tests."""
        n = self.node_count
        return set(int(u) * n + int(v) for u, v in self.edges)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.edges).tobytes())
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()[:16]

    def with_edges(self, edges: np.ndarray) -> "Graph":
        return Graph(self.node_count, edges, self.features, self.labels, self.class_count)


@dataclass(frozen=True)
class Splits:
    """Disjoint train/val/test node ids plus the training labels."""

    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    train_labels: np.ndarray

    def __post_init__(self):
        tr, va, te = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if tr & va or tr & te or va & te:
            raise GraphValidationError("train/val/test splits must be disjoint")


@dataclass
class Neighborhood:
    """K-hop neighborhood of one node; members exclude the center."""

    center: int
    members: np.ndarray              # node ids, BFS order (hop then id)
    hop_of: dict[int, int]           # member -> hop distance in [1, K]
    local_adjacency: np.ndarray      # over [center] + members order

    @property
    def node_order(self) -> np.ndarray:
        return np.concatenate([[self.center], self.members]).astype(np.int64)


# -- ingestion ----------------------------------------------------------------

def load_graph(nodes_path, edges_path) -> Graph:
    """Load a graph from the TSV pair; drops duplicate edges and self-loops."""
    ids, labels, rows = [], [], []
    feature_dim = None
    with open(nodes_path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphParseError(nodes_path, line_no,
                                      f"expected 3 tab-separated fields, got {len(parts)}")
            try:
                node_id = int(parts[0])
                label = int(parts[1])
                feats = np.array([float(tok) for tok in parts[2].split(",")])
            except ValueError as exc:
                raise GraphParseError(nodes_path, line_no, f"non-numeric field: {exc}") from exc
            if feature_dim is None:
                feature_dim = feats.size
            elif feats.size != feature_dim:
                raise GraphParseError(nodes_path, line_no,
                                      f"expected {feature_dim} features, got {feats.size}")
            ids.append(node_id)
            labels.append(label)
            rows.append(feats)
    if not ids:
        raise GraphValidationError(f"no nodes in {nodes_path}")
    n = len(ids)
    if sorted(ids) != list(range(n)):
        raise GraphValidationError("node ids must be contiguous 0..N-1")
    order = np.argsort(ids)
    features = np.stack(rows)[order]
    labels_arr = np.array(labels, dtype=np.int64)[order]
    if labels_arr.min() < 0:
        raise GraphValidationError("negative label")
    class_count = int(labels_arr.max()) + 1

    raw_edges = []
    with open(edges_path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphParseError(edges_path, line_no,
                                      f"expected 2 tab-separated fields, got {len(parts)}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphParseError(edges_path, line_no, f"non-numeric endpoint: {exc}") from exc
            if not (0 <= u < n and 0 <= v < n):
                raise GraphValidationError(
                    f"{edges_path}:{line_no}: dangling edge endpoint ({u}, {v})")
            raw_edges.append((u, v))
    edges = _canonical_edges(np.array(raw_edges).reshape(-1, 2))
    dropped = len(raw_edges) - edges.shape[0]
    if dropped:
        logger.warning("dropped %d duplicate/self-loop edge lines from %s", dropped, edges_path)
    return Graph(n, edges, features, labels_arr, class_count)


def save_graph(g: Graph, nodes_path, edges_path) -> None:
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for i in range(g.node_count):
            feats = ",".join(repr(float(x)) for x in g.features[i])
            fh.write(f"{i}\t{g.labels[i]}\t{feats}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")


# -- synthetic generation -------------------------------------------------------

def generate_sbm(block_sizes, p_in: float, p_out: float, feature_dim: int,
                 feature_signal: float, seed: int) -> Graph:
    """Stochastic block model with class-mean features.

    Labels are block ids; node features are the label's one-hot scaled by
    ``feature_signal`` plus unit Gaussian noise. Deterministic given seed.
    """
    block_sizes = [int(b) for b in block_sizes]
    if any(b <= 0 for b in block_sizes):
        raise GraphValidationError("empty block in block_sizes")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise GraphValidationError("need 0 <= p_out <= p_in <= 1")
    c = len(block_sizes)
    if feature_dim < c:
        raise GraphValidationError("feature_dim must be at least the class count")
    n = sum(block_sizes)
    labels = np.repeat(np.arange(c, dtype=np.int64), block_sizes)
    starts = np.concatenate([[0], np.cumsum(block_sizes)])

    rng = derive_rng(seed, "sbm-edges")
    edges = []
    for bi in range(c):
        for bj in range(bi, c):
            rows = np.arange(starts[bi], starts[bi + 1])
            cols = np.arange(starts[bj], starts[bj + 1])
            p = p_in if bi == bj else p_out
            draw = rng.random((rows.size, cols.size)) < p
            if bi == bj:
                draw = np.triu(draw, k=1)
            r, cix = np.nonzero(draw)
            if r.size:
                edges.append(np.stack([rows[r], cols[cix]], axis=1))
    edge_arr = np.concatenate(edges, axis=0) if edges else np.zeros((0, 2), dtype=np.int64)

    noise_rng = derive_rng(seed, "sbm-features")
    features = noise_rng.standard_normal((n, feature_dim))
    features[np.arange(n), labels] += feature_signal
    return Graph(n, edge_arr, features, labels, c)


# -- splits ---------------------------------------------------------------------

def split_nodes(g: Graph, label_rate: float, val_count: int, test_count: int,
                seed: int) -> Splits:
    """Uniform random disjoint train/val/test split; train = floor(rate * N)."""
    train_count = int(np.floor(label_rate * g.node_count))
    if train_count < 1:
        raise GraphValidationError(
            f"label_rate {label_rate} yields an empty training set")
    if train_count + val_count + test_count > g.node_count:
        raise GraphValidationError("not enough nodes for the requested split sizes")
    rng = derive_rng(seed, "splits")
    order = rng.permutation(g.node_count)
    train = np.sort(order[:train_count])
    val = np.sort(order[train_count:train_count + val_count])
    test = np.sort(order[train_count + val_count:train_count + val_count + test_count])
    return Splits(train, val, test, g.labels[train])


# -- neighborhoods ----------------------------------------------------------------

def _bfs_hops(neighbor_lists, center: int, k: int) -> dict[int, int]:
    """Hop distance (<= k) of every node reachable from center, excluding it."""
    hops: dict[int, int] = {}
    frontier = [center]
    seen = {center}
    for hop in range(1, k + 1):
        nxt = []
        for node in frontier:
            for nb in neighbor_lists[node]:
                nb = int(nb)
                if nb not in seen:
                    seen.add(nb)
                    hops[nb] = hop
                    nxt.append(nb)
        frontier = nxt
        if not frontier:
            break
    return hops


def k_hop(g: Graph, center: int, k: int) -> Neighborhood:
    """Breadth-first K-hop neighborhood with its induced local adjacency."""
    if k < 1:
        raise GraphValidationError("K must be >= 1")
    if not (0 <= center < g.node_count):
        raise GraphValidationError(f"invalid node id {center}")
    hops = _bfs_hops(g.neighbor_lists, center, k)
    members = np.array(sorted(hops, key=lambda u: (hops[u], u)), dtype=np.int64)
    order = np.concatenate([[center], members]).astype(np.int64)
    pos = {int(node): i for i, node in enumerate(order)}
    local = np.zeros((order.size, order.size))
    for i, node in enumerate(order):
        for nb in g.neighbor_lists[node]:
            j = pos.get(int(nb))
            if j is not None:
                local[i, j] = 1.0
    return Neighborhood(center=int(center), members=members,
                        hop_of=hops, local_adjacency=local)


# -- subsampling -------------------------------------------------------------------

def subsample_graph(g: Graph, node_fraction: float, seed: int) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on a uniform node sample; returns (graph, new->old ids)."""
    if not (0.0 < node_fraction <= 1.0):
        raise GraphValidationError("node_fraction must be in (0, 1]")
    keep = int(np.floor(node_fraction * g.node_count))
    if keep < 1:
        raise GraphValidationError("subsample would be empty")
    rng = derive_rng(seed, "subsample")
    chosen = np.sort(rng.choice(g.node_count, size=keep, replace=False))
    new_id = -np.ones(g.node_count, dtype=np.int64)
    new_id[chosen] = np.arange(keep)
    mask = (new_id[g.edges[:, 0]] >= 0) & (new_id[g.edges[:, 1]] >= 0) \
        if g.edge_count else np.zeros(0, dtype=bool)
    sub_edges = new_id[g.edges[mask]] if g.edge_count else np.zeros((0, 2), dtype=np.int64)
    sub = Graph(keep, sub_edges, g.features[chosen], g.labels[chosen], g.class_count)
    return sub, chosen


# -- perturbations -------------------------------------------------------------------

def _pair_from_code(code: np.ndarray, n: int) -> np.ndarray:
    """Decode flat upper-triangular pair codes into (i, j) with i < j."""
    code = np.asarray(code, dtype=np.int64)
    rows = np.arange(n, dtype=np.int64)
    starts = rows * (2 * n - rows - 1) // 2  # first code of row i
    i = np.searchsorted(starts, code, side="right") - 1
    j = code - starts[i] + i + 1
    return np.stack([i, j], axis=1)


def perturb_random(g: Graph, rate: float, seed: int) -> Graph:
    """Flip floor(rate * |E|) distinct node pairs, uniformly at random."""
    if rate < 0:
        raise GraphValidationError("rate must be nonnegative")
    budget = int(np.floor(rate * g.edge_count))
    if budget == 0:
        return g.with_edges(g.edges)
    total_pairs = g.node_count * (g.node_count - 1) // 2
    if budget > total_pairs:
        raise GraphValidationError("flip budget exceeds available node pairs")
    rng = derive_rng(seed, "perturb-random")
    codes = rng.choice(total_pairs, size=budget, replace=False)
    flips = _pair_from_code(np.sort(codes), g.node_count)
    existing = g.edge_codes()
    n = g.node_count
    for u, v in flips:
        code = int(u) * n + int(v)
        if code in existing:
            existing.remove(code)
        else:
            existing.add(code)
    edges = np.array([[c // n, c % n] for c in sorted(existing)], dtype=np.int64)
    return g.with_edges(edges.reshape(-1, 2))


def perturb_heterophilic(g: Graph, rate: float, labels: np.ndarray, seed: int) -> Graph:
    """Spend the edge budget adding cross-label edges, least-similar first.

    Candidate pairs have different labels and no existing edge; they are
    added in increasing order of cosine feature similarity. If the supply
    runs out the remainder falls back to random flips (logged).
    """
    if rate < 0:
        raise GraphValidationError("rate must be nonnegative")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (g.node_count,):
        raise GraphValidationError("labels must cover all nodes")
    budget = int(np.floor(rate * g.edge_count))
    if budget == 0:
        return g.with_edges(g.edges)

    norms = np.linalg.norm(g.features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = g.features / safe[:, None]
    sim = unit @ unit.T

    cross = labels[:, None] != labels[None, :]
    cand = np.triu(cross, k=1)
    if g.edge_count:
        cand[g.edges[:, 0], g.edges[:, 1]] = False
    ii, jj = np.nonzero(cand)
    order = np.lexsort((jj, ii, sim[ii, jj]))
    take = min(budget, ii.size)
    chosen = set(int(ii[k]) * g.node_count + int(jj[k]) for k in order[:take])

    existing = g.edge_codes()
    existing |= chosen
    shortfall = budget - take
    if shortfall > 0:
        logger.warning("heterophilic supply exhausted; %d random fallback flips", shortfall)
        rng = derive_rng(seed, "perturb-heterophilic-fallback")
        n = g.node_count
        while shortfall > 0:
            u, v = sorted(rng.choice(n, size=2, replace=False).tolist())
            code = int(u) * n + int(v)
            if code in chosen:
                continue
            chosen.add(code)
            if code in existing:
                existing.remove(code)
            else:
                existing.add(code)
            shortfall -= 1
    n = g.node_count
    edges = np.array([[c // n, c % n] for c in sorted(existing)], dtype=np.int64)
    return g.with_edges(edges.reshape(-1, 2))
