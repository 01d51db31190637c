"""Flattened K-hop ego subgraphs for node-centric training.

Each center node owns a local subgraph over itself plus its K-hop members;
the neighbor bottleneck gates the members. All egos in a chunk are laid out
back to back in one flat slot axis whose block-diagonal adjacency is a
scipy CSR matrix, so gated propagation is a single sparse matmul with no
padding. Work and memory stay linear in the number of centers at fixed
degree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor
from .graph import Graph, _bfs_hops


@dataclass
class EgoChunk:
    centers: np.ndarray        # (B,) global center ids
    orig_index: np.ndarray     # (B,) positions in the caller's center list
    slots_global: np.ndarray   # (T,) global node id per flat slot
    slot_local: np.ndarray     # (T,) rows into the encode-id table
    center_pos: np.ndarray     # (B,) flat slot of each center
    member_slots: np.ndarray   # (T - B,) flat slots of members, pair order
    center_onehot: np.ndarray  # (T,) 1.0 at center slots
    adj: sp.csr_matrix         # (T, T) block-diagonal local adjacency
    pair_slice: slice          # this chunk's slice of the flat pair arrays

    @property
    def n_slots(self) -> int:
        return self.slots_global.size


@dataclass
class EgoBatch:
    centers: np.ndarray        # caller order
    k: int
    chunks: list
    pair_center: np.ndarray    # (P,) global center id per (center, member) pair
    pair_member: np.ndarray    # (P,) global member id per pair
    encode_ids: np.ndarray     # sorted unique node ids appearing in any ego

    @property
    def n_pairs(self) -> int:
        return self.pair_center.size


def spmm(a: sp.csr_matrix, x: Tensor) -> Tensor:
    """Sparse @ dense with autodiff; the matrix must be symmetric."""
    out = Tensor(a @ x.data, parents=(x,))

    def bw(g):
        if x.requires_grad:
            x._accumulate(a @ g)

    out._backward = bw
    return out


def build_ego_batch(g: Graph, centers, k: int, chunk_size: int = 512) -> EgoBatch:
    centers = np.asarray(centers, dtype=np.int64)
    neighbor_lists = g.neighbor_lists
    infos = []
    for pos, c in enumerate(centers):
        hops = _bfs_hops(neighbor_lists, int(c), k)
        members = sorted(hops, key=lambda u: (hops[u], u))
        infos.append((int(c), members, pos))

    chunks: list[EgoChunk] = []
    pair_center_parts, pair_member_parts = [], []
    offset = 0
    for lo in range(0, len(infos), chunk_size):
        block = infos[lo:lo + chunk_size]
        slots, center_pos, member_slots = [], [], []
        rows, cols = [], []
        base = 0
        for center, members, _ in block:
            order = [center] + members
            pos_of = {node: i for i, node in enumerate(order)}
            for i, node in enumerate(order):
                for nb in neighbor_lists[node]:
                    j = pos_of.get(int(nb))
                    if j is not None and j > i:
                        rows.append(base + i)
                        cols.append(base + j)
            slots.extend(order)
            center_pos.append(base)
            member_slots.extend(range(base + 1, base + len(order)))
            pair_center_parts.append(np.full(len(members), center, dtype=np.int64))
            pair_member_parts.append(np.array(members, dtype=np.int64))
            base += len(order)
        t = len(slots)
        r = np.array(rows + cols, dtype=np.int64)
        c = np.array(cols + rows, dtype=np.int64)
        adj = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(t, t))
        onehot = np.zeros(t)
        onehot[center_pos] = 1.0
        n_pairs = t - len(block)
        chunks.append(EgoChunk(
            centers=np.array([e[0] for e in block], dtype=np.int64),
            orig_index=np.array([e[2] for e in block], dtype=np.int64),
            slots_global=np.array(slots, dtype=np.int64),
            slot_local=np.zeros(t, dtype=np.int64),  # filled once encode_ids exists
            center_pos=np.array(center_pos, dtype=np.int64),
            member_slots=np.array(member_slots, dtype=np.int64),
            center_onehot=onehot,
            adj=adj,
            pair_slice=slice(offset, offset + n_pairs),
        ))
        offset += n_pairs

    pair_center = (np.concatenate(pair_center_parts)
                   if pair_center_parts else np.zeros(0, dtype=np.int64))
    pair_member = (np.concatenate(pair_member_parts)
                   if pair_member_parts else np.zeros(0, dtype=np.int64))
    touched = [centers]
    if pair_member.size:
        touched.append(pair_member)
    encode_ids = np.unique(np.concatenate(touched))
    for chunk in chunks:
        chunk.slot_local = np.searchsorted(encode_ids, chunk.slots_global)
    return EgoBatch(centers=centers, k=k, chunks=chunks,
                    pair_center=pair_center, pair_member=pair_member,
                    encode_ids=encode_ids)
