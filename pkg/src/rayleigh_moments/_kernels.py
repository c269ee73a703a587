"""Hot loops of the Monte Carlo oracle.

The numba versions are used when numba imports and RAYLEIGH_MOMENTS_PURE_NUMPY
is unset or "0". The pure-numpy versions are always importable under the
``*_numpy`` names so tests and the benchmark can compare the two paths.
"""

from __future__ import annotations

import math
import os

import numpy as np

# outcome class codes shared with prob.py
VACUUM = 0
PLAIN = 1
DRESSED_SUM = 2
DRESSED_K = 3
FUND_SUM = 4
FUND_K = 5
BUCKET = 6

_DISABLE = os.environ.get("RAYLEIGH_MOMENTS_PURE_NUMPY", "0") not in ("", "0")

try:
    if _DISABLE:
        raise ImportError("numba disabled by environment")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def quad_forms_numpy(alpha, mats):
    """Re(alpha^H W_m alpha) for every sample row and every matrix."""
    w_alpha = np.einsum("mij,nj->nmi", mats, alpha)
    return np.einsum("ni,nmi->nm", alpha.conj(), w_alpha).real


def mc_functionals_numpy(alpha, gram, g0, mats, kinds, counts):
    """Per-sample outcome functionals F_m(alpha), shape (n_samples, n_outcomes).

    ``gram`` is the source Gram matrix, ``g0`` the overlaps <b0|psi_j>,
    ``mats`` the single-photon matrices <psi_i|E_m|psi_j>.
    """
    nf = np.einsum("ni,ij,nj->n", alpha.conj(), gram, alpha).real
    a0sq = np.abs(alpha @ g0) ** 2
    with np.errstate(divide="ignore"):
        log_a0sq = np.log(a0sq)
    q = quad_forms_numpy(alpha, mats)
    out = np.empty_like(q)
    base = np.exp(-nf)
    perp = np.exp(-(nf - a0sq))
    for m, (kind, c) in enumerate(zip(kinds, counts)):
        if kind == VACUUM:
            out[:, m] = base
        elif kind == PLAIN:
            out[:, m] = base * q[:, m]
        elif kind == DRESSED_SUM:
            out[:, m] = perp * q[:, m]
        elif kind == DRESSED_K:
            out[:, m] = np.exp(-nf + c * log_a0sq - math.lgamma(c + 1)) * q[:, m] if c else base * q[:, m]
        elif kind == FUND_SUM:
            out[:, m] = perp - base
        elif kind == FUND_K:
            out[:, m] = np.exp(-nf + (c + 1) * log_a0sq - math.lgamma(c + 2))
        else:
            out[:, m] = 0.0
    bucket = kinds == BUCKET
    if bucket.any():
        out[:, bucket] = (1.0 - out[:, ~bucket].sum(axis=1))[:, None]
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def quad_forms_numba(alpha, mats):
        n, J = alpha.shape
        M = mats.shape[0]
        out = np.empty((n, M))
        for s in range(n):
            for m in range(M):
                acc = 0.0
                for i in range(J):
                    ai = alpha[s, i].conjugate()
                    row = 0j
                    for j in range(J):
                        row += mats[m, i, j] * alpha[s, j]
                    acc += (ai * row).real
                out[s, m] = acc
        return out

    @njit(cache=True)
    def mc_functionals_numba(alpha, gram, g0, mats, kinds, counts):
        n, J = alpha.shape
        M = mats.shape[0]
        out = np.empty((n, M))
        for s in range(n):
            nf = 0.0
            a0 = 0j
            for i in range(J):
                ai = alpha[s, i]
                a0 += g0[i] * ai
                row = 0j
                for j in range(J):
                    row += gram[i, j] * alpha[s, j]
                nf += (ai.conjugate() * row).real
            a0sq = a0.real * a0.real + a0.imag * a0.imag
            base = math.exp(-nf)
            perp = math.exp(-(nf - a0sq))
            total = 0.0
            for m in range(M):
                kind = kinds[m]
                c = counts[m]
                q = 0.0
                if kind == 1 or kind == 2 or kind == 3:
                    for i in range(J):
                        row = 0j
                        for j in range(J):
                            row += mats[m, i, j] * alpha[s, j]
                        q += (alpha[s, i].conjugate() * row).real
                if kind == 0:
                    v = base
                elif kind == 1:
                    v = base * q
                elif kind == 2:
                    v = perp * q
                elif kind == 3:
                    if c == 0:
                        v = base * q
                    elif a0sq <= 0.0:
                        v = 0.0
                    else:
                        v = math.exp(-nf + c * math.log(a0sq) - math.lgamma(c + 1.0)) * q
                elif kind == 4:
                    v = perp - base
                elif kind == 5:
                    v = 0.0 if a0sq <= 0.0 else math.exp(-nf + (c + 1) * math.log(a0sq) - math.lgamma(c + 2.0))
                else:
                    v = 0.0
                out[s, m] = v
                if kind != 6:
                    total += v
            for m in range(M):
                if kinds[m] == 6:
                    out[s, m] = 1.0 - total
        return out

    quad_forms = quad_forms_numba
    mc_functionals = mc_functionals_numba
else:
    quad_forms = quad_forms_numpy
    mc_functionals = mc_functionals_numpy
