"""The two information bottlenecks.

Attribute side: a Gaussian code per node with reparameterized sampling and
closed-form KL to the standard normal prior. Neighbor side: per-neighbor
retention probabilities with relaxed binary-concrete sampling and closed-form
KL to a Bernoulli(r) prior. Both KLs are in nats and differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, constant
from .graph import Neighborhood
from .nn import MLP, mlp_forward
from .seeding import derive_rng

PROB_FLOOR = 1e-6
SIGMA_FLOOR = 1e-6


@dataclass
class AttributeCode:
    """Gaussian code of one node: sample = mu + sigma * noise, exactly."""

    mu: Tensor
    sigma: Tensor
    sample: Tensor
    noise: np.ndarray


@dataclass
class MaskSample:
    """Output of one concrete-relaxation draw over neighbor probabilities."""

    relaxed: Tensor         # values in (0, 1), differentiable w.r.t. probs
    hard: Tensor            # 0/1 forward, straight-through backward
    noise: np.ndarray       # the frozen logistic noise
    mode: str

    @property
    def values(self) -> Tensor:
        return self.relaxed if self.mode == "relaxed" else self.hard


@dataclass
class NeighborSelection:
    """A realized neighbor subset and its induced local adjacency."""

    probs: np.ndarray | None
    relaxed_mask: np.ndarray | None
    hard_mask: np.ndarray
    selected: np.ndarray
    local_adjacency: np.ndarray
    center: int
    node_order: np.ndarray   # [center] + selected


def split_encoder_output(raw: Tensor) -> tuple[Tensor, Tensor]:
    """Split an encoder's (n, 2*dz) output into (mu, sigma)."""
    dz = raw.shape[-1] // 2
    mu = raw[:, :dz]
    sigma = raw[:, dz:].softplus() + SIGMA_FLOOR
    return mu, sigma


def encode_features(features, f_x: MLP, noise: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """Batched reparameterized encoding: returns (mu, sigma, sample)."""
    raw = mlp_forward(f_x, features)
    if raw.ndim == 1:
        raw = raw.reshape(1, -1)
    if not np.all(np.isfinite(raw.data)):
        raise ValueError("non-finite encoder output")
    mu, sigma = split_encoder_output(raw)
    sample = mu + sigma * constant(noise)
    return mu, sigma, sample


def attribute_encode(x, f_x: MLP, noise_seed: int | None = None,
                     noise: np.ndarray | None = None) -> AttributeCode:
    """Encode one feature vector; the noise draw is seeded or given directly."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    dz = f_x.out_dim // 2
    if noise is None:
        if noise_seed is None:
            raise ValueError("provide noise_seed or an explicit noise vector")
        noise = derive_rng(noise_seed, "attribute-noise").standard_normal(dz)
    noise = np.asarray(noise, dtype=np.float64).reshape(1, dz)
    mu, sigma, sample = encode_features(x, f_x, noise)
    return AttributeCode(mu=mu.reshape(-1), sigma=sigma.reshape(-1),
                         sample=sample.reshape(-1), noise=noise.reshape(-1))


def gaussian_kl_terms(mu: Tensor, sigma: Tensor) -> Tensor:
    """Per-row KL(N(mu, sigma^2) || N(0, I)) in nats; rows are codes."""
    mu = as_tensor(mu)
    sigma = as_tensor(sigma)
    terms = (mu * mu + sigma * sigma - 1.0 - 2.0 * sigma.log()) * 0.5
    return terms.sum(axis=-1)


def gaussian_kl(code: AttributeCode) -> Tensor:
    """KL of one attribute code to the standard-normal prior."""
    return gaussian_kl_terms(code.mu.reshape(1, -1), code.sigma.reshape(1, -1)).sum()


def neighbor_probs(x_center, neighborhood: Neighborhood, features, f_n: MLP) -> Tensor:
    """Retention probability per member: logistic(f_n(x_u) . f_n(x_center))."""
    members = neighborhood.members
    if members.size == 0:
        return constant(np.zeros(0))
    h = mlp_forward(f_n, np.asarray(x_center, dtype=np.float64).reshape(1, -1))
    h_u = mlp_forward(f_n, np.asarray(features, dtype=np.float64)[members])
    return (h_u * h).sum(axis=1).sigmoid()


def pairwise_probs(h: Tensor, centers: np.ndarray, members: np.ndarray) -> Tensor:
    """Vectorized retention probabilities for (center, member) index pairs."""
    if centers.size == 0:
        return constant(np.zeros(0))
    return (h[centers] * h[members]).sum(axis=1).sigmoid()


def sample_mask(probs, temperature: float, mode: str, seed: int | None = None,
                noise: np.ndarray | None = None) -> MaskSample:
    """Binary-concrete draw per probability; hard mode is straight-through.

    Probabilities are clamped to [1e-6, 1 - 1e-6] before sampling. The same
    seed always yields the same logistic noise.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if mode not in ("relaxed", "hard"):
        raise ValueError(f"unknown mode {mode!r}")
    p = as_tensor(probs).clip(PROB_FLOOR, 1.0 - PROB_FLOOR)
    if noise is None:
        if seed is None:
            raise ValueError("provide seed or explicit logistic noise")
        u = derive_rng(seed, "concrete").uniform(size=p.shape)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        noise = np.log(u) - np.log1p(-u)
    noise = np.asarray(noise, dtype=np.float64)
    logits = p.log() - (1.0 - p).log() + constant(noise)
    relaxed = (logits * (1.0 / temperature)).sigmoid()
    hard_bits = (relaxed.data > 0.5).astype(np.float64)
    hard = relaxed + constant(hard_bits - relaxed.data)
    return MaskSample(relaxed=relaxed, hard=hard, noise=noise, mode=mode)


def bernoulli_kl(probs, r: float) -> Tensor:
    """Sum over neighbors of KL(Bernoulli(p_u) || Bernoulli(r)), nats."""
    if not (0.0 < r < 1.0):
        raise ValueError("prior rate r must be strictly inside (0, 1)")
    p = as_tensor(probs)
    if p.data.size == 0:
        return constant(0.0)
    p = p.clip(PROB_FLOOR, 1.0 - PROB_FLOOR)
    q = 1.0 - p
    return (p * (p.log() - np.log(r)) + q * (q.log() - np.log(1.0 - r))).sum()


def assemble_selection(neighborhood: Neighborhood, hard_mask,
                       probs=None, relaxed_mask=None) -> NeighborSelection:
    """Restrict the local adjacency to the center plus retained members."""
    mask = np.asarray(
        hard_mask.data if isinstance(hard_mask, Tensor) else hard_mask,
        dtype=np.float64).reshape(-1)
    if mask.size != neighborhood.members.size:
        raise ValueError("mask length must equal the member count")
    keep = mask > 0.5
    selected = neighborhood.members[keep]
    local_idx = np.concatenate([[0], np.nonzero(keep)[0] + 1]).astype(np.int64)
    a_s = neighborhood.local_adjacency[np.ix_(local_idx, local_idx)]

    def _np(x):
        if x is None:
            return None
        return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    return NeighborSelection(
        probs=_np(probs), relaxed_mask=_np(relaxed_mask), hard_mask=mask,
        selected=selected, local_adjacency=a_s, center=neighborhood.center,
        node_order=np.concatenate([[neighborhood.center], selected]).astype(np.int64))
