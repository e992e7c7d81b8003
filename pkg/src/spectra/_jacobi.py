"""JIT-compiled inner kernel for the one-sided Jacobi SVD.

Kept in its own module so the compile cache is keyed to this file. The
kernel is strict IEEE (no fastmath): results are a pure function of the
input bytes.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def orthogonalize_columns(g, v, conv_tol, max_sweeps):  # pragma: no cover - compiled
    """Cyclic one-sided Jacobi sweeps, in place.

    Rotates column pairs of g (and the same pairs of v) until every pair
    satisfies |<gi, gj>| <= conv_tol * |gi| * |gj|. Returns the number of
    sweeps used, or -1 if max_sweeps was reached without converging.
    """
    m, n = g.shape
    nv = v.shape[0]
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                app = 0.0
                aqq = 0.0
                apq = 0.0
                for k in range(m):
                    gi = g[k, i]
                    gj = g[k, j]
                    app += gi * gi
                    aqq += gj * gj
                    apq += gi * gj
                if abs(apq) <= conv_tol * np.sqrt(app) * np.sqrt(aqq):
                    continue
                rotated = True
                zeta = (aqq - app) / (2.0 * apq)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(m):
                    gi = g[k, i]
                    gj = g[k, j]
                    g[k, i] = c * gi - s * gj
                    g[k, j] = s * gi + c * gj
                for k in range(nv):
                    vi = v[k, i]
                    vj = v[k, j]
                    v[k, i] = c * vi - s * vj
                    v[k, j] = s * vi + c * vj
        if not rotated:
            return sweep
    return -1
