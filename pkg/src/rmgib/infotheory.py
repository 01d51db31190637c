"""Exact information-theoretic quantities on finite joint tables.

This is the oracle for the bottleneck bound: for any joint built from a
marginal p(x, y) and a channel p(z | x) — so z depends on (x, y) only
through x — the conditional mutual information I(z; y | x) vanishes, and
therefore I(z; x) = I(z; y) + I(z; x | y) >= I(z; y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class JointDistribution:
    """Probability table over discrete (x, y, z), axes in that order."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 3:
            raise ValueError("joint table must have axes (x, y, z)")
        if np.any(t < 0):
            raise ValueError("joint table entries must be nonnegative")
        if abs(t.sum() - 1.0) > 1e-12:
            raise ValueError("joint table must sum to 1 within 1e-12")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


def _plogq(p: np.ndarray, num: np.ndarray, den: np.ndarray) -> float:
    """Sum of p * log(num / den) over the support of p."""
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(num[mask]) - np.log(den[mask]))))


def discrete_mi(j: JointDistribution, vars: tuple[str, str] = ("z", "y"),
                conditioned_on: str | None = None) -> float:
    """Exact (conditional) mutual information in nats by full summation."""
    a, b = vars
    if a == b or a not in AXES or b not in AXES:
        raise ValueError(f"vars must be two distinct names from {sorted(AXES)}")
    t = j.table
    if conditioned_on is None:
        drop = next(iter(set(AXES) - {a, b}))
        p_ab = t.sum(axis=AXES[drop])
        # reorder so the first axis is `a`
        if AXES[a] > AXES[b]:
            p_ab = p_ab.T
        p_a = p_ab.sum(axis=1, keepdims=True)
        p_b = p_ab.sum(axis=0, keepdims=True)
        return _plogq(p_ab, p_ab, p_a * p_b)
    c = conditioned_on
    if c in (a, b) or c not in AXES:
        raise ValueError("conditioning variable must be the remaining axis")
    # reorder table to (a, b, c)
    order = (AXES[a], AXES[b], AXES[c])
    p_abc = np.transpose(t, order)
    p_c = p_abc.sum(axis=(0, 1), keepdims=True)
    p_ac = p_abc.sum(axis=1, keepdims=True)
    p_bc = p_abc.sum(axis=0, keepdims=True)
    num = p_abc * p_c
    den = p_ac * p_bc
    mask = p_abc > 0
    return float(np.sum(p_abc[mask] * (np.log(num[mask]) - np.log(den[mask]))))


def kernel_joint(p_xy: np.ndarray, kernel: np.ndarray) -> JointDistribution:
    """Joint p(x,y,z) = p(x,y) * p(z|x): z sees y only through x."""
    p_xy = np.asarray(p_xy, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if p_xy.ndim != 2 or kernel.ndim != 2 or p_xy.shape[0] != kernel.shape[0]:
        raise ValueError("need p_xy (|x|,|y|) and kernel (|x|,|z|)")
    rows = kernel.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-12):
        raise ValueError("kernel rows must each sum to 1")
    table = p_xy[:, :, None] * kernel[:, None, :]
    return JointDistribution(table / table.sum())


def random_kernel_joint(rng: np.random.Generator, nx: int = 3, ny: int = 3,
                        nz: int = 3) -> JointDistribution:
    """A random joint of the kernel-built form (for property tests)."""
    p_xy = rng.random((nx, ny)) + 1e-3
    p_xy /= p_xy.sum()
    kernel = rng.random((nx, nz)) + 1e-3
    kernel /= kernel.sum(axis=1, keepdims=True)
    return kernel_joint(p_xy, kernel)


def verify_ib_inequality(j: JointDistribution, tol: float = 1e-9) -> dict:
    """Check the compression bound on a kernel-built joint.

    Rejects joints where z is not conditionally independent of y given x,
    then asserts the decomposition I(z;x) = I(z;y) + I(z;x|y) and the
    inequality I(z;x) >= I(z;y), both within ``tol``. Returns all four MI
    values plus the decomposition gap.
    """
    mi_zy_given_x = discrete_mi(j, ("z", "y"), conditioned_on="x")
    if abs(mi_zy_given_x) > tol:
        raise ValueError(
            f"joint violates conditional independence: I(z;y|x) = {mi_zy_given_x:.3e}")
    mi_zx = discrete_mi(j, ("z", "x"))
    mi_zy = discrete_mi(j, ("z", "y"))
    mi_zx_given_y = discrete_mi(j, ("z", "x"), conditioned_on="y")
    gap = mi_zx - (mi_zy + mi_zx_given_y)
    if abs(gap) > tol:
        raise AssertionError(f"decomposition identity violated: gap = {gap:.3e}")
    if mi_zx < mi_zy - tol:
        raise AssertionError(f"inequality violated: I(z;x)={mi_zx} < I(z;y)={mi_zy}")
    return {
        "mi_zx": mi_zx,
        "mi_zy": mi_zy,
        "mi_zx_given_y": mi_zx_given_y,
        "mi_zy_given_x": mi_zy_given_x,
        "decomposition_gap": gap,
        "holds": True,
    }
