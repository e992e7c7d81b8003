"""Dense matrix types and a deterministic, canonicalized full SVD.

The SVD is a one-sided (Hestenes) Jacobi: plane rotations orthogonalize
the columns of the working matrix in cyclic sweeps, each sweep visiting
every unordered column pair once in row-cyclic order. Accuracy is at
machine-precision level for the dense sizes in scope, and the result is
a pure function of the input bytes.

Canonical form of a factorization:
  * singular values descending,
  * inside a degenerate cluster (gap <= 1e-10 * sigma_1) columns are
    ordered by pivot index,
  * each left vector's largest-magnitude entry (lowest index on ties) is
    non-negative, with the right vector's sign slaved to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jacobi import orthogonalize_columns
from .errors import ConvergenceError

MAX_SWEEPS = 60
# a column pair counts as orthogonal when |<gi, gj>| <= CONV_TOL * |gi| * |gj|
CONV_TOL = 1e-14
# ranks closer than DEGENERATE_RTOL * sigma_1 form a degenerate cluster
DEGENERATE_RTOL = 1e-10


@dataclass(frozen=True)
class WeightMatrix:
    """A dense real matrix with a layer identity."""

    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"weight matrix {self.name!r} must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"weight matrix {self.name!r} contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SvdFactorization:
    """Canonicalized thin SVD: U (m x p), S (p, descending), V (n x p)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    name: str = ""

    @property
    def p(self) -> int:
        return self.S.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    def check(self, rtol: float = 1e-10) -> None:
        """Assert the orthonormality and ordering invariants (test aid).

        Ordering is monotone up to the degeneracy tolerance: inside a
        cluster of near-equal values the canonical pivot order wins.
        """
        eye_u = self.U.T @ self.U - np.eye(self.p)
        eye_v = self.V.T @ self.V - np.eye(self.p)
        if np.abs(eye_u).max() > rtol or np.abs(eye_v).max() > rtol:
            raise AssertionError(f"{self.name}: singular vectors not orthonormal")
        slack = DEGENERATE_RTOL * (self.S[0] if self.p else 0.0)
        if np.any(np.diff(self.S) > slack) or np.any(self.S < 0):
            raise AssertionError(f"{self.name}: singular values not sorted non-negative")


def _complete_basis(u: np.ndarray, filled: int) -> None:
    # fill zero-sigma columns with canonical basis vectors, Gram-Schmidt'd
    # against everything already placed; deterministic by construction
    m, p = u.shape
    col = filled
    for k in range(m):
        if col == p:
            return
        cand = np.zeros(m)
        cand[k] = 1.0
        cand -= u[:, :col] @ (u[:, :col].T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            u[:, col] = cand / norm
            col += 1
    if col < p:
        raise ConvergenceError("could not complete an orthonormal basis")


def _canonicalize(u: np.ndarray, s: np.ndarray, v: np.ndarray):
    order = np.argsort(-s, kind="stable")
    u, s, v = u[:, order], s[order], v[:, order]

    # sign convention: pivot entry of each left vector non-negative
    pivots = np.argmax(np.abs(u), axis=0)
    flip = u[pivots, np.arange(s.size)] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0

    # inside a degenerate cluster the sigma order is arbitrary; pivot
    # index gives a stable, input-independent order
    tol = DEGENERATE_RTOL * (s[0] if s.size else 0.0)
    i = 0
    while i < s.size - 1:
        j = i
        while j < s.size - 1 and s[j] - s[j + 1] <= tol:
            j += 1
        if j > i:
            sub = np.arange(i, j + 1)
            perm = sub[np.argsort(pivots[sub], kind="stable")]
            u[:, sub], s[sub], v[:, sub] = u[:, perm], s[perm], v[:, perm]
            pivots[sub] = pivots[perm]
        i = j + 1
    return u, s, v


def svd(w: WeightMatrix) -> SvdFactorization:
    """Full thin SVD of a weight matrix in canonical form.

    Deterministic: identical input bytes give identical output bytes.
    Raises ConvergenceError (naming the layer) if the sweep cap is hit.
    """
    a = w.values
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    g = np.array(a, dtype=float, order="F")
    v = np.asfortranarray(np.eye(a.shape[1]))
    if orthogonalize_columns(g, v, CONV_TOL, MAX_SWEEPS) < 0:
        raise ConvergenceError(f"SVD did not converge within {MAX_SWEEPS} sweeps for layer {w.name!r}")

    s = np.sqrt(np.einsum("ij,ij->j", g, g))
    u = np.zeros_like(g)
    nonzero = s > 0.0
    u[:, nonzero] = g[:, nonzero] / s[nonzero]

    # order nonzero columns first so completion sees the final basis
    order = np.argsort(-s, kind="stable")
    u, s, v = u[:, order], s[order], v[:, order]
    n_nonzero = int(np.count_nonzero(s))
    if n_nonzero < s.size:
        _complete_basis(u, n_nonzero)

    if transposed:
        u, v = v, u
    u, s, v = _canonicalize(u, s, v)
    return SvdFactorization(U=np.ascontiguousarray(u), S=s, V=np.ascontiguousarray(v), name=w.name)


def _as_rank_indices(keep, p: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(i) for i in keep)), dtype=np.intp)
    if idx.size and (idx[0] < 0 or idx[-1] >= p):
        raise IndexError(f"rank index out of range [0, {p})")
    return idx


def reconstruct(f: SvdFactorization, keep) -> WeightMatrix:
    """Sum of the rank-1 components sigma_i u_i v_i^T over kept ranks."""
    idx = _as_rank_indices(keep, f.p)
    if idx.size == 0:
        return WeightMatrix(np.zeros(f.shape), name=f.name)
    w = (f.U[:, idx] * f.S[idx]) @ f.V[:, idx].T
    return WeightMatrix(w, name=f.name)


def frobenius(w: WeightMatrix) -> float:
    return float(np.linalg.norm(w.values))


def spectral_gap(f: SvdFactorization, i: int) -> float:
    """sigma_i - sigma_{i+1}, with sigma_p taken as zero."""
    if not 0 <= i < f.p:
        raise IndexError(f"rank {i} out of range [0, {f.p})")
    nxt = f.S[i + 1] if i + 1 < f.p else 0.0
    return float(f.S[i] - nxt)


def degenerate_ranks(f: SvdFactorization, rtol: float = DEGENERATE_RTOL) -> np.ndarray:
    """Boolean mask of ranks living in a degenerate cluster.

    A rank is flagged when the gap on either side of it falls below
    rtol * sigma_1; such singular vectors are not individually unique.
    """
    s = f.S
    tol = rtol * (s[0] if s.size else 0.0)
    gaps = np.empty(s.size)
    gaps[:-1] = s[:-1] - s[1:]
    gaps[-1] = s[-1]
    below = gaps <= tol
    flags = below.copy()
    flags[1:] |= below[:-1]
    return flags
