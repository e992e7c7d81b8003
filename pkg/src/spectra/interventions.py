"""Counterfactual weight construction: replace, swap, zero, randomize,
or mask singular vectors while keeping the receiving model's singular
values fixed.

Random replacement draws unit-norm Gaussian vectors without
re-orthogonalizing against the remaining basis; the perturbation is
therefore not confined to the chosen ranks, which is intentional and
recorded in output metadata by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .errors import ShapeMismatchError
from .linalg import SvdFactorization, WeightMatrix
from .rng import stream_for

Sides = Literal["left", "right", "both"]


@dataclass(frozen=True)
class RankSet:
    """A sorted, duplicate-free set of rank indices."""

    indices: tuple[int, ...]

    @classmethod
    def of(cls, ranks: Iterable[int]) -> "RankSet":
        idx = tuple(sorted({int(r) for r in ranks}))
        if idx and idx[0] < 0:
            raise IndexError("rank indices must be non-negative")
        return cls(idx)

    def bounded(self, p: int) -> tuple[int, ...]:
        if self.indices and self.indices[-1] >= p:
            raise IndexError(f"rank {self.indices[-1]} out of range [0, {p})")
        return self.indices

    def __len__(self) -> int:
        return len(self.indices)


def _as_rank_set(ranks) -> RankSet:
    return ranks if isinstance(ranks, RankSet) else RankSet.of(ranks)


def _rebuild(u: np.ndarray, s: np.ndarray, v: np.ndarray, name: str) -> WeightMatrix:
    return WeightMatrix((u * s) @ v.T, name=name)


def replace_vectors(
    target: SvdFactorization,
    donor: SvdFactorization,
    ranks,
    sides: Sides = "both",
) -> WeightMatrix:
    """Reconstruct target with the selected singular vectors taken from
    the donor at the given ranks; target's singular values throughout."""
    if target.shape != donor.shape:
        raise ShapeMismatchError(f"target {target.shape} vs donor {donor.shape}")
    if sides not in ("left", "right", "both"):
        raise ValueError(f"sides must be left|right|both, got {sides!r}")
    idx = list(_as_rank_set(ranks).bounded(target.p))
    u = target.U.copy()
    v = target.V.copy()
    if sides in ("left", "both"):
        u[:, idx] = donor.U[:, idx]
    if sides in ("right", "both"):
        v[:, idx] = donor.V[:, idx]
    return _rebuild(u, target.S, v, target.name)


def swap_vectors(a: SvdFactorization, b: SvdFactorization, ranks) -> tuple[WeightMatrix, WeightMatrix]:
    """Exchange both-side singular vectors between two factorizations at
    the given ranks; each reconstruction keeps its own singular values."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"factorizations have shapes {a.shape} vs {b.shape}")
    idx = list(_as_rank_set(ranks).bounded(a.p))
    ua, va = a.U.copy(), a.V.copy()
    ub, vb = b.U.copy(), b.V.copy()
    ua[:, idx], ub[:, idx] = b.U[:, idx], a.U[:, idx]
    va[:, idx], vb[:, idx] = b.V[:, idx], a.V[:, idx]
    return _rebuild(ua, a.S, va, a.name), _rebuild(ub, b.S, vb, b.name)


def zero_vectors(f: SvdFactorization, ranks) -> WeightMatrix:
    """Reconstruction with the rank-1 components at the given ranks removed."""
    drop = set(_as_rank_set(ranks).bounded(f.p))
    keep = [i for i in range(f.p) if i not in drop]
    if not keep:
        return WeightMatrix(np.zeros(f.shape), name=f.name)
    return _rebuild(f.U[:, keep], f.S[keep], f.V[:, keep], f.name)


def randomize_vectors(f: SvdFactorization, ranks, seed: int) -> WeightMatrix:
    """Replace both singular vectors at the given ranks with unit-norm
    random directions; singular values unchanged.

    Each rank draws from its own (seed, layer name, rank) stream: the
    left vector takes the first m normals, the right the next n, so the
    result is independent of any evaluation order.
    """
    idx = _as_rank_set(ranks).bounded(f.p)
    m, n = f.shape
    u = f.U.copy()
    v = f.V.copy()
    for r in idx:
        z = stream_for(seed, f.name, r).normals(m + n)
        zu, zv = z[:m], z[m:]
        u[:, r] = zu / np.linalg.norm(zu)
        v[:, r] = zv / np.linalg.norm(zv)
    return _rebuild(u, f.S, v, f.name)


def mask_by_order(f: SvdFactorization, count: int, direction: Literal["top_down", "bottom_up"]) -> WeightMatrix:
    """Zero out `count` components from the leading or trailing end."""
    if not 0 <= count <= f.p:
        raise ValueError(f"count={count} outside [0, {f.p}]")
    if direction == "top_down":
        ranks = range(count)
    elif direction == "bottom_up":
        ranks = range(f.p - count, f.p)
    else:
        raise ValueError(f"direction must be top_down|bottom_up, got {direction!r}")
    return zero_vectors(f, ranks)
