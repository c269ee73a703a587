"""Orthonormal derivative-mode bases (Hermite-Gaussian modes for a Gaussian PSF).

Mode b_l spans the part of d^l psi orthogonal to all lower derivatives, and
q_l = <b_l | d^l_Xbar psi> / l! is made positive by choosing the mode sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LinearDependence, OrderTooHigh, ValidationError
from .psf import Grid, PsfModel, gram, inner_product

DEPENDENCE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DerivativeBasis:
    psf: PsfModel
    modes: np.ndarray     # (lmax+1, n) complex, rows orthonormal on psf.grid
    q: np.ndarray         # (lmax+1,) real, positive

    @property
    def lmax(self) -> int:
        return self.modes.shape[0] - 1

    @property
    def grid(self) -> Grid:
        return self.psf.grid

    def overlaps(self, funcs) -> np.ndarray:
        """<b_i | f_j> for stacked grid functions ``funcs``."""
        return gram(self.modes, funcs, self.grid)

    def gram_matrix(self) -> np.ndarray:
        return gram(self.modes, self.modes, self.grid)


def gram_schmidt_basis(psf: PsfModel, lmax: int = 8, tol: float = DEPENDENCE_TOL) -> DerivativeBasis:
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Derivatives are scaled by sigma^l / l! first. Order l is rejected when the
    residual left after projecting out lower modes is below ``tol`` times the
    scaled derivative's norm.
    """
    if lmax < 0:
        raise ValidationError("lmax must be non-negative")
    if lmax > psf.lmax:
        raise OrderTooHigh(f"basis order {lmax} exceeds PSF lmax {psf.lmax}")
    grid = psf.grid
    modes = np.zeros((lmax + 1, grid.size), dtype=complex)
    q = np.zeros(lmax + 1)
    for l in range(lmax + 1):
        d = psf.xbar_derivative(l)
        v = d * (psf.sigma**l / math.factorial(l))
        v0 = math.sqrt(inner_product(v, v, grid).real)
        for _ in range(2):
            for j in range(l):
                v = v - inner_product(modes[j], v, grid) * modes[j]
        r = math.sqrt(inner_product(v, v, grid).real)
        if not r > tol * v0:
            raise LinearDependence(l, r / v0 if v0 else 0.0)
        b = v / r
        ql = inner_product(b, d, grid) / math.factorial(l)
        # <b_l|d^l psi> is real up to a global phase; rotate it onto the positive axis
        phase = ql / abs(ql)
        modes[l] = b * phase
        q[l] = abs(ql)
    modes.setflags(write=False)
    q.setflags(write=False)
    return DerivativeBasis(psf, modes, q)


def hermite_gauss(n: int, x: np.ndarray, sigma: float) -> np.ndarray:
    """Analytic HG mode matched to the Gaussian PSF of width sigma (intensity rms)."""
    a = math.sqrt(2.0) * sigma
    coef = np.zeros(n + 1)
    coef[n] = 1.0
    u = x / a
    h = np.polynomial.hermite.hermval(u, coef)
    return ((2 * math.pi * sigma**2) ** -0.25 * h * np.exp(-0.5 * u * u)
            / math.sqrt(2.0**n * math.factorial(n)))


# ==========================================================================
# 2D separable
# ==========================================================================

@dataclass(frozen=True, eq=False)
class Basis2D:
    """Product modes b_(k,l)(x, y) = bx_k(x) by_l(y), kept in factored form."""

    bx: DerivativeBasis
    by: DerivativeBasis

    @property
    def q2d(self) -> np.ndarray:
        return np.outer(self.bx.q, self.by.q)

    @property
    def lmax(self) -> int:
        return min(self.bx.lmax, self.by.lmax)

    def mode(self, k: int, l: int) -> np.ndarray:
        return np.outer(self.bx.modes[k], self.by.modes[l])

    def gram_matrix(self) -> np.ndarray:
        """Gram matrix over (k, l) in row-major order; the Kronecker product of factor Grams."""
        return np.kron(self.bx.gram_matrix(), self.by.gram_matrix())

    def ordered_indices(self, total: int) -> list[tuple[int, int]]:
        """Indices with k + l <= total, by total degree then k."""
        return [(k, t - k) for t in range(total + 1) for k in range(t + 1)
                if k <= self.bx.lmax and t - k <= self.by.lmax]


def separable_basis_2d(bx: DerivativeBasis, by: DerivativeBasis) -> Basis2D:
    return Basis2D(bx, by)
