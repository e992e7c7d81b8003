"""Spectral measurements: alignment, update ratios, change statistics,
effective rank, explained variance, and trajectory alignment.

Alignment between two factorizations compares matched singular vectors
by absolute inner product, which is invariant to the simultaneous sign
flip each (u_i, v_i) pair is only defined up to. Ranks inside a
degenerate cluster of either input are flagged rather than suppressed:
their individual vectors are not unique, so their alignments are noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .linalg import SvdFactorization, WeightMatrix, degenerate_ranks, svd
from .tensor_store import LayerPair


@dataclass(frozen=True)
class AlignmentSeries:
    """Per-rank |cos| alignments between matched singular vectors."""

    layer: str
    ranks: np.ndarray
    left: np.ndarray
    right: np.ndarray
    degenerate: np.ndarray


@dataclass(frozen=True)
class DeltaSpectrum:
    """Update-magnitude ratios and update-direction alignments per rank.

    ratio[i] is sigma_i(delta) / sigma_i(pre), +inf where sigma_i(pre)
    is zero (those ranks are marked in pre_sigma_zero). align_u/align_v
    compare the update's singular vectors against the pre-update ones.
    """

    layer: str
    ranks: np.ndarray
    ratios: np.ndarray
    align_u: np.ndarray
    align_v: np.ndarray
    pre_sigma_zero: np.ndarray


@dataclass(frozen=True)
class SpectrumChangeStats:
    """Summary statistics of how a singular-value spectrum changed."""

    rsd: float
    mrc: float
    maxrc: float
    t1rc: float
    tailrc: float
    er_pre: float
    er_post: float
    d_er: float
    n_sv: int


def _resolve_ranks(ranks, p: int) -> np.ndarray:
    if ranks is None:
        return np.arange(p, dtype=np.intp)
    idx = np.asarray(list(ranks), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= p):
        raise IndexError(f"rank range outside [0, {p})")
    return idx


def align_factorizations(a: SvdFactorization, b: SvdFactorization, ranks=None) -> AlignmentSeries:
    """Absolute inner products of matched left and right singular vectors."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"factorizations have shapes {a.shape} vs {b.shape}")
    idx = _resolve_ranks(ranks, a.p)
    left = np.abs(np.einsum("ij,ij->j", a.U[:, idx], b.U[:, idx]))
    right = np.abs(np.einsum("ij,ij->j", a.V[:, idx], b.V[:, idx]))
    degenerate = degenerate_ranks(a)[idx] | degenerate_ranks(b)[idx]
    return AlignmentSeries(layer=a.name or b.name, ranks=idx, left=left, right=right, degenerate=degenerate)


def delta_spectrum(pair: LayerPair, ranks=None) -> DeltaSpectrum:
    """Spectral comparison of the accumulated update against the
    pre-update weights: per-rank singular value ratios and singular
    vector alignments."""
    if pair.pre.values.shape != pair.post.values.shape:
        raise ShapeMismatchError(f"layer {pair.name!r} has mismatched pre/post shapes")
    f_pre = svd(pair.pre)
    delta = WeightMatrix(pair.post.values - pair.pre.values, name=pair.name)
    f_delta = svd(delta)

    idx = _resolve_ranks(ranks, f_pre.p)
    s_pre = f_pre.S[idx]
    s_delta = f_delta.S[idx]
    zero = s_pre == 0.0
    ratios = np.full(idx.size, np.inf)
    ratios[~zero] = s_delta[~zero] / s_pre[~zero]
    align_u = np.abs(np.einsum("ij,ij->j", f_delta.U[:, idx], f_pre.U[:, idx]))
    align_v = np.abs(np.einsum("ij,ij->j", f_delta.V[:, idx], f_pre.V[:, idx]))
    return DeltaSpectrum(
        layer=pair.name,
        ranks=idx,
        ratios=ratios,
        align_u=align_u,
        align_v=align_v,
        pre_sigma_zero=zero,
    )


def effective_rank(spectrum, weighting: str = "sigma") -> float:
    """exp of the entropy of the normalized spectrum.

    weighting="sigma" normalizes the singular values themselves;
    "sigma2" normalizes their squares (energy fractions) instead.
    """
    s = np.asarray(spectrum, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("spectrum must be a non-empty 1-D array")
    if np.any(s < 0):
        raise ValueError("singular values must be non-negative")
    if weighting == "sigma2":
        s = s * s
    elif weighting != "sigma":
        raise ValueError(f"unknown weighting {weighting!r}")
    total = s.sum()
    if total == 0.0:
        raise ValueError("effective rank of an all-zero spectrum is undefined")
    p = s / total
    nz = p > 0
    return float(np.exp(-np.sum(p[nz] * np.log(p[nz]))))


def explained_variance(spectrum, k: int) -> float:
    """Fraction of squared-Frobenius energy in the top-k components."""
    s = np.asarray(spectrum, dtype=float)
    if not 0 <= k <= s.size:
        raise ValueError(f"k={k} outside [0, {s.size}]")
    energy = s * s
    total = energy.sum()
    if total == 0.0:
        raise ValueError("explained variance of an all-zero spectrum is undefined")
    return float(energy[:k].sum() / total)


def explained_variance_curve(spectrum) -> np.ndarray:
    """Cumulative explained variance at every k = 1..n."""
    s = np.asarray(spectrum, dtype=float)
    energy = s * s
    total = energy.sum()
    if total == 0.0:
        raise ValueError("explained variance of an all-zero spectrum is undefined")
    return np.cumsum(energy) / total


def min_rank_for_energy(spectrum, fraction: float = 0.90) -> int:
    """Smallest k whose top-k components reach the energy fraction."""
    curve = explained_variance_curve(spectrum)
    return int(np.searchsorted(curve, fraction - 1e-15) + 1)


def spectrum_change(pre_spectrum, post_spectrum, tail_frac: float = 0.1) -> SpectrumChangeStats:
    """Change statistics between two singular-value spectra.

    Per-rank relative changes are taken only where the pre-update value
    is positive; the tail statistic averages the signed changes over the
    last ceil(tail_frac * n) ranks. The overall distance (rsd) is the
    norm of the difference over the norm of the pre spectrum.
    """
    pre = np.asarray(pre_spectrum, dtype=float)
    post = np.asarray(post_spectrum, dtype=float)
    if pre.shape != post.shape or pre.ndim != 1 or pre.size == 0:
        raise ValueError("spectra must be 1-D of equal nonzero length")
    if not np.any(pre > 0):
        raise ValueError("pre spectrum is all zero")

    n = pre.size
    pos = pre > 0
    delta = np.zeros(n)
    delta[pos] = (post[pos] - pre[pos]) / pre[pos]

    tail_n = math.ceil(tail_frac * n)
    tail = np.zeros(n, dtype=bool)
    if tail_n > 0:
        tail[n - tail_n :] = True
    tail_pos = tail & pos

    er_pre = effective_rank(pre)
    er_post = effective_rank(post)
    return SpectrumChangeStats(
        rsd=float(np.linalg.norm(post - pre) / np.linalg.norm(pre)),
        mrc=float(np.mean(np.abs(delta[pos]))),
        maxrc=float(np.max(np.abs(delta[pos]))),
        t1rc=float(delta[0]) if pos[0] else float("nan"),
        tailrc=float(np.mean(delta[tail_pos])) if tail_pos.any() else float("nan"),
        er_pre=er_pre,
        er_post=er_post,
        d_er=er_post - er_pre,
        n_sv=n,
    )


def trajectory_alignment(factorizations, topk: int) -> np.ndarray:
    """Pairwise mean top-k left alignment across a checkpoint sequence.

    Entry (i, j) averages |<u_r(i), u_r(j)>| over ranks r < topk. The
    matrix is symmetric with unit diagonal.
    """
    seq = list(factorizations)
    if not seq:
        raise ValueError("empty checkpoint sequence")
    shape = seq[0].shape
    for f in seq[1:]:
        if f.shape != shape:
            raise ShapeMismatchError(f"trajectory factorizations have shapes {shape} vs {f.shape}")
    if not 1 <= topk <= seq[0].p:
        raise ValueError(f"topk={topk} outside [1, {seq[0].p}]")

    n = len(seq)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            cos = np.abs(np.einsum("ij,ij->j", seq[i].U[:, :topk], seq[j].U[:, :topk]))
            out[i, j] = out[j, i] = float(cos.mean())
    return out
