"""Parameterized layers, the optimizer, and the finite-difference checker.

ParamSets own named float64 tensors; MLPs are plain affine stacks with a
rectifier between layers. The optimizer is Adam with the usual defaults.
``gradient_check`` is the independent oracle used to validate every loss in
the package: central differences against the autodiff gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor
from .seeding import derive_rng

CHECKPOINT_FORMAT = "rmgib-params"
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(ValueError):
    """A gradient contained nan/inf; carries the offending tensor name."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for tensor {name!r}")
        self.name = name


@dataclass
class ParamSet:
    """Named trainable tensors with fixed shapes, tagged by owning module."""

    owner: str = "model"
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"non-finite initial values for {name!r}")
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def n_values(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.tensors.items()
        }

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            t = self.tensors[name]
            if t.data.shape != np.asarray(v).shape:
                raise ValueError(f"shape mismatch loading {name!r}")
            t.data = np.array(v, dtype=np.float64)

    def merge(self, other: "ParamSet", prefix: str) -> None:
        for name, t in other.tensors.items():
            key = f"{prefix}.{name}"
            if key in self.tensors:
                raise ValueError(f"duplicate parameter name {key!r}")
            self.tensors[key] = t


def init_affine(params: ParamSet, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """Uniform fan-scaled weight, zero bias."""
    bound = 1.0 / math.sqrt(fan_in)
    w = params.add(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    b = params.add(f"{name}.b", np.zeros(fan_out))
    return w, b


@dataclass
class MLP:
    """Affine stack with a rectifier between layers (none after the last)."""

    dims: tuple[int, ...]
    params: ParamSet

    @classmethod
    def create(cls, in_dim: int, out_dim: int, hidden=(256,), seed: int = 0,
               owner: str = "mlp") -> "MLP":
        dims = (in_dim, *hidden, out_dim)
        params = ParamSet(owner=owner)
        rng = derive_rng(seed, "init", owner)
        for i in range(len(dims) - 1):
            init_affine(params, f"layer{i}", dims[i], dims[i + 1], rng)
        return cls(dims=dims, params=params)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def __call__(self, inputs) -> Tensor:
        return mlp_forward(self, inputs)


def mlp_forward(m: MLP, inputs) -> Tensor:
    """Forward pass; accepts (n, in_dim) or a single (in_dim,) vector."""
    x = as_tensor(inputs)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    if x.shape[-1] != m.in_dim:
        raise ValueError(f"expected input dim {m.in_dim}, got {x.shape[-1]}")
    n_layers = len(m.dims) - 1
    for i in range(n_layers):
        x = x @ m.params[f"layer{i}.w"] + m.params[f"layer{i}.b"]
        if i < n_layers - 1:
            x = x.relu()
    return x.reshape(-1) if squeeze else x


# -- optimizer ---------------------------------------------------------------

def adam_init(params: ParamSet) -> dict:
    return {
        "t": 0,
        "m": {n: np.zeros_like(t.data) for n, t in params.tensors.items()},
        "v": {n: np.zeros_like(t.data) for n, t in params.tensors.items()},
    }


def sgd_adam_step(params: ParamSet, grads: dict[str, np.ndarray], state: dict,
                  lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8,
                  weight_decay: float = 0.0) -> tuple[ParamSet, dict]:
    """One adaptive-moment update, in place; returns (params, state)."""
    b1, b2 = betas
    state["t"] += 1
    t = state["t"]
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        if weight_decay:
            g = g + weight_decay * tensor.data
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


class Adam:
    """Convenience wrapper over :func:`sgd_adam_step` for training loops."""

    def __init__(self, params: ParamSet, lr: float = 0.01, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = adam_init(params)

    def step(self) -> None:
        sgd_adam_step(self.params, self.params.grads(), self.state,
                      lr=self.lr, weight_decay=self.weight_decay)


# -- finite-difference oracle --------------------------------------------------

def gradient_check(loss_fn, params: ParamSet, epsilon: float = 1e-5,
                   max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between central differences and autodiff gradients.

    ``loss_fn(params)`` must be deterministic (freeze any noise draws before
    calling). Relative error per coordinate is |g_fd - g| / max(1, |g_fd|, |g|).
    When the parameter count exceeds ``max_coords``, a seeded subset of
    coordinates is probed instead of every one.
    """
    params.zero_grad()
    loss = loss_fn(params)
    if not np.isfinite(loss.data):
        raise ValueError("loss is non-finite at the probe point")
    loss.backward()
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for n, t in params.tensors.items()}

    coords = []
    for name, t in params.tensors.items():
        for flat in range(t.data.size):
            coords.append((name, flat))
    if max_coords is not None and len(coords) > max_coords:
        rng = derive_rng(seed, "gradient-check")
        idx = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(idx)]

    worst = 0.0
    for name, flat in coords:
        t = params.tensors[name]
        orig = t.data.ravel()[flat]
        t.data.ravel()[flat] = orig + epsilon
        f_plus = float(loss_fn(params).data)
        t.data.ravel()[flat] = orig - epsilon
        f_minus = float(loss_fn(params).data)
        t.data.ravel()[flat] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError("loss is non-finite at a perturbed probe point")
        g_fd = (f_plus - f_minus) / (2.0 * epsilon)
        g = analytic[name].ravel()[flat]
        rel = abs(g_fd - g) / max(1.0, abs(g_fd), abs(g))
        worst = max(worst, rel)
    return worst


# -- checkpoints ----------------------------------------------------------------

def save_params(path, params: ParamSet) -> None:
    """Named-tensor archive: JSON of name -> shape -> row-major values."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "owner": params.owner,
        "tensors": {
            name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
            for name, t in params.tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_params(path) -> ParamSet:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a parameter archive: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported archive version {doc.get('version')}")
    params = ParamSet(owner=doc.get("owner", "model"))
    for name, entry in doc["tensors"].items():
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        params.add(name, values)
    return params
