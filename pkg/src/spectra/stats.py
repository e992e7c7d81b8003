"""Correlation and multiple-testing support for the similarity-versus-
generalization analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    p_value: float


def pearson(x, y) -> CorrelationResult:
    """Pearson correlation with a two-sided p-value.

    The p-value uses the exact null distribution of
    t = r * sqrt((n - 2) / (1 - r^2)) under Student-t(n - 2), evaluated
    through the regularized incomplete beta function.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("x and y must be 1-D of equal length")
    n = xa.size
    if n < 3:
        raise ValueError("need at least 3 samples")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("constant input has no defined correlation")
    r = float(np.sum(xc * yc) / (sx * sy))
    r = min(1.0, max(-1.0, r))

    df = n - 2
    if 1.0 - r * r <= 0.0:
        p = 0.0
    else:
        t2 = r * r * df / (1.0 - r * r)
        # two-sided: P(|T| >= t) = I_{df/(df+t^2)}(df/2, 1/2)
        p = float(betainc(df / 2.0, 0.5, df / (df + t2)))
    return CorrelationResult(r=r, n=n, p_value=min(1.0, max(0.0, p)))


def bh_fdr(p_values, q: float) -> set[int]:
    """Benjamini-Hochberg step-up: indices of rejected hypotheses.

    Sorts p ascending, finds the largest i with p_(i) <= i * q / m, and
    rejects everything at or below that rank. Returns original indices.
    """
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1:
        raise ValueError("p-values must be 1-D")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    m = p.size
    if m == 0:
        return set()
    order = np.argsort(p, kind="stable")
    thresholds = q * np.arange(1, m + 1) / m
    passing = np.nonzero(p[order] <= thresholds)[0]
    if passing.size == 0:
        return set()
    cutoff = passing[-1] + 1
    return set(int(i) for i in order[:cutoff])
