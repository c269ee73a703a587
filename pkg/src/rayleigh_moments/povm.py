"""Measurement catalogs.

An outcome is a single-photon operator E plus a class that says how it acts
on multi-photon states:

* ``vacuum``: no photon detected.
* ``single``: exactly one photon, found in E.
* ``dressed``: one photon in E together with any number (or exactly
  ``count``) of photons in the fundamental mode b0. Requires E b0 = 0.
* ``fundamental``: every photon (at least one, or exactly ``count + 1``) in b0.
* ``bucket``: everything else, so probabilities sum to one.

Fields are stacks of grid functions: an (m, n) array in 1D, or a pair of
(m, nx) and (m, ny) arrays for separable products in 2D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import Basis2D, DerivativeBasis
from .errors import AsymmetricGrid, PixelTooSmall, UnsupportedBase, ValidationError
from .psf import Grid, Psf2D, PsfModel, gram


# ==========================================================================
# single-photon operators
# ==========================================================================

def field_gram(bra, ket, grids) -> np.ndarray:
    if len(grids) == 1:
        return gram(bra, ket, grids[0])
    return gram(bra[0], ket[0], grids[0]) * gram(bra[1], ket[1], grids[1])


def _mirror(fields, dim):
    if dim == 1:
        return np.atleast_2d(fields)[:, ::-1]
    return tuple(np.atleast_2d(f)[:, ::-1] for f in fields)


class SingleOp:
    kind = "op"

    def matrix(self, bra, ket) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class IdentityOp(SingleOp):
    grids: tuple
    kind = "identity"

    def matrix(self, bra, ket):
        return field_gram(bra, ket, self.grids)


@dataclass(frozen=True, eq=False)
class ModeOp(SingleOp):
    """Projector onto v = sum_i c_i b_i (1D) or sum_kl c_kl b_k(x) b_l(y) (2D)."""

    basis: object
    coeffs: np.ndarray
    kind = "mode"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if not math.isclose(np.linalg.norm(c), 1.0, rel_tol=1e-12):
            raise ValidationError("mode-projector coefficients must have unit norm")
        object.__setattr__(self, "coeffs", c)

    def amplitudes(self, fields) -> np.ndarray:
        """<v|f_i> for each field."""
        c = self.coeffs.conj()
        if isinstance(self.basis, Basis2D):
            ox = self.basis.bx.overlaps(fields[0])[: c.shape[0]]
            oy = self.basis.by.overlaps(fields[1])[: c.shape[1]]
            return np.einsum("kl,ki,li->i", c, ox, oy)
        return c @ self.basis.overlaps(fields)[: c.size]

    def matrix(self, bra, ket):
        return np.outer(self.amplitudes(bra).conj(), self.amplitudes(ket))


@dataclass(frozen=True, eq=False)
class ParityOp(SingleOp):
    """(I + s P)/2 in 1D, or the product of such factors in 2D."""

    signs: tuple
    grids: tuple
    kind = "parity"

    def matrix(self, bra, ket):
        if len(self.grids) == 1:
            g = self.grids[0]
            return 0.5 * (gram(bra, ket, g) + self.signs[0] * gram(bra, _mirror(ket, 1), g))
        out = 1.0
        for f_bra, f_ket, s, g in zip(bra, ket, self.signs, self.grids):
            out = out * 0.5 * (gram(f_bra, f_ket, g) + s * gram(f_bra, np.atleast_2d(f_ket)[:, ::-1], g))
        return out


@dataclass(frozen=True, eq=False)
class PixelOp(SingleOp):
    lo: float
    hi: float
    grid: Grid
    weights: np.ndarray = field(repr=False)
    kind = "pixel"

    @classmethod
    def build(cls, lo, hi, grid):
        return cls(lo, hi, grid, cell_weights(grid, lo, hi))

    @property
    def grids(self):
        return (self.grid,)

    def matrix(self, bra, ket):
        bra = np.atleast_2d(bra)
        ket = np.atleast_2d(ket)
        return (bra.conj() * self.weights) @ ket.T


@dataclass(frozen=True, eq=False)
class CombinedOp(SingleOp):
    terms: tuple      # ((coef, op), ...)
    kind = "combined"

    def matrix(self, bra, ket):
        return sum(c * op.matrix(bra, ket) for c, op in self.terms)


def cell_weights(grid: Grid, lo: float, hi: float) -> np.ndarray:
    """Quadrature weights of int_lo^hi over the piecewise-linear interpolant.

    Summing over cells that tile the grid gives the trapezoid weights back.
    """
    x = grid.nodes
    a = np.clip(lo, x[:-1], x[1:])
    b = np.clip(hi, x[:-1], x[1:])
    h = x[1:] - x[:-1]
    # integral of the two hat functions over [a, b] inside each interval
    right = ((b - x[:-1]) ** 2 - (a - x[:-1]) ** 2) / (2 * h)
    left = (b - a) - right
    w = np.zeros_like(x)
    w[:-1] += left
    w[1:] += right
    return w


# ==========================================================================
# outcomes and POVMs
# ==========================================================================

KINDS = ("vacuum", "single", "dressed", "fundamental", "bucket")


@dataclass(frozen=True, eq=False)
class OutcomeOp:
    label: str
    kind: str
    op: SingleOp | None = None
    count: int | None = None       # dressing photon count, None = summed

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown outcome kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Povm:
    label: str
    outcomes: tuple
    psf: object                     # PsfModel or Psf2D
    b0: object                      # fundamental mode as a one-row field stack
    dressing: str | None = None     # None, "summed" or "per-count"

    @property
    def dimension(self) -> int:
        return self.psf.dimension

    @property
    def grids(self) -> tuple:
        if isinstance(self.psf, Psf2D):
            return (self.psf.fx.grid, self.psf.fy.grid)
        return (self.psf.grid,)

    @property
    def labels(self) -> list[str]:
        return [o.label for o in self.outcomes]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def __len__(self):
        return len(self.outcomes)


def _b0_of(psf) -> object:
    if isinstance(psf, Psf2D):
        return (psf.fx.derivative(0)[None, :], psf.fy.derivative(0)[None, :])
    return psf.derivative(0)[None, :]


def _assemble(label, singles, psf, dressing=None) -> Povm:
    outs = [OutcomeOp("vac", "vacuum")] + list(singles) + [OutcomeOp("bucket", "bucket")]
    return Povm(label, tuple(outs), psf, _b0_of(psf), dressing)


def _unit(n, i, j=None, sign=1.0, angle=math.pi / 4):
    c = np.zeros(n, dtype=complex)
    if j is None:
        c[i] = 1.0
    else:
        c[i] = math.cos(angle)
        c[j] = sign * math.sin(angle)
    return c


def spade_povm(basis: DerivativeBasis) -> Povm:
    n = basis.lmax + 1
    singles = [OutcomeOp(f"b{l}", "single", ModeOp(basis, _unit(n, l))) for l in range(n)]
    return _assemble("spade", singles, basis.psf)


def _pairs(n_modes, parity):
    start = 0 if parity == "even" else 1
    pairs = [(l, l + 1) for l in range(start, n_modes - 1, 2)]
    covered = {i for p in pairs for i in p}
    return pairs, [l for l in range(n_modes) if l not in covered]


def interleaved_povm(basis: DerivativeBasis, parity: str = "even", angle: float = math.pi / 4) -> Povm:
    """Pairs (b_l +- b_{l+1}) for l of the given parity; unpaired modes stay as projectors.

    ``angle`` generalizes the 1/sqrt(2) mixing to cos/sin(angle).
    """
    if parity not in ("even", "odd"):
        raise ValidationError("parity must be 'even' or 'odd'")
    if basis.lmax < 1:
        raise ValidationError("interleaved bases need lmax >= 1")
    n = basis.lmax + 1
    pairs, alone = _pairs(n, parity)
    singles = [OutcomeOp(f"b{l}", "single", ModeOp(basis, _unit(n, l))) for l in alone]
    for i, j in pairs:
        for sgn, tag in ((1.0, "+"), (-1.0, "-")):
            singles.append(OutcomeOp(f"b{i}{tag}b{j}", "single",
                                     ModeOp(basis, _unit(n, i, j, sgn, angle))))
    return _assemble(f"interleaved-{parity}", singles, basis.psf)


def centroid_povm(basis: DerivativeBasis) -> Povm:
    """The pair (b0 +- b1)/sqrt(2) used to locate the centroid."""
    n = basis.lmax + 1
    singles = [OutcomeOp(f"b0{t}b1", "single", ModeOp(basis, _unit(n, 0, 1, s)))
               for s, t in ((1.0, "+"), (-1.0, "-"))]
    return _assemble("centroid", singles, basis.psf)


def sliver_povm(psf, dimension: int | None = None) -> Povm:
    dim = psf.dimension if dimension is None else dimension
    if dim != psf.dimension:
        raise ValidationError("dimension does not match the PSF")
    grids = (psf.fx.grid, psf.fy.grid) if dim == 2 else (psf.grid,)
    if not all(g.is_symmetric() for g in grids):
        raise AsymmetricGrid("parity sorting needs a grid symmetric about the centroid")
    if dim == 1:
        singles = [OutcomeOp("odd", "single", ParityOp((-1.0,), grids)),
                   OutcomeOp("even", "single", ParityOp((1.0,), grids))]
    else:
        singles = []
        for sx, tx in ((-1.0, "o"), (1.0, "e")):
            for sy, ty in ((-1.0, "o"), (1.0, "e")):
                singles.append(OutcomeOp(tx + ty, "single", ParityOp((sx, sy), grids)))
    return _assemble("sliver", singles, psf)


def direct_imaging_povm(psf: PsfModel, pixel_width: float) -> Povm:
    """Pixels of the given width centred on the origin, clipped to the grid span."""
    grid = psf.grid
    if not pixel_width >= grid.spacing * (1 - 1e-12):
        raise PixelTooSmall(f"pixel width {pixel_width} is below the grid spacing {grid.spacing}")
    lo, hi = grid.span
    n_hi = math.ceil(hi / pixel_width - 0.5)
    n_lo = math.floor(lo / pixel_width + 0.5)
    singles = []
    for j in range(n_lo, n_hi + 1):
        a = max(lo, (j - 0.5) * pixel_width)
        b = min(hi, (j + 0.5) * pixel_width)
        if b > a:
            singles.append(OutcomeOp(f"px{j}", "single", PixelOp.build(a, b, grid)))
    return _assemble(f"direct:{pixel_width:g}", singles, psf)


# ==========================================================================
# 2D families
# ==========================================================================

TABLE2D = ("b0w", "b1w", "b2w", "b3w", "b4w", "b5w", "b6w")


def _family_pairs(family: int, total: int):
    pairs = []
    for K in range(total + 1):
        for L in range(K + 1):
            if family in (1, 2) and L % 2 == (family - 1):
                pairs.append(((L, K - L), (L + 1, K - L - 1)))
            elif family in (3, 4) and L % 2 == (family - 3):
                pairs.append(((L, K - L), (L + 1, K - L)))
            elif family in (5, 6) and L % 2 == (family - 5):
                pairs.append(((K - L, L), (K - L, L + 1)))
    return pairs


def table2d_povm(basis2d: Basis2D, family: str, total: int | None = None) -> Povm:
    """One row of the 2D measurement table on modes with k + l <= total.

    Pairs whose partner falls outside the mode set are dropped and their
    modes measured as plain projectors.
    """
    family = family.lower()
    if family not in TABLE2D:
        raise ValidationError(f"unknown 2D family {family!r}; use one of {TABLE2D}")
    fam = int(family[1])
    total = basis2d.lmax if total is None else total
    modes = basis2d.ordered_indices(total)
    present = set(modes)
    shape = (basis2d.bx.lmax + 1, basis2d.by.lmax + 1)

    def coeff(*entries):
        c = np.zeros(shape, dtype=complex)
        for (k, l), v in entries:
            c[k, l] = v
        return c

    singles, used = [], set()
    if fam:
        for a, b in _family_pairs(fam, total):
            if a in present and b in present and a not in used and b not in used:
                used |= {a, b}
                r = 1 / math.sqrt(2)
                for sgn, tag in ((1, "+"), (-1, "-")):
                    singles.append(OutcomeOp(f"b{a[0]}{a[1]}{tag}b{b[0]}{b[1]}", "single",
                                             ModeOp(basis2d, coeff((a, r), (b, sgn * r)))))
    for k, l in modes:
        if (k, l) not in used:
            singles.append(OutcomeOp(f"b{k}{l}", "single", ModeOp(basis2d, coeff(((k, l), 1.0)))))
    psf = Psf2D(basis2d.bx.psf, basis2d.by.psf)
    return _assemble(family, singles, psf)


# ==========================================================================
# photon-number dressing
# ==========================================================================

def dressing_cutoff(epsilon: float, rel: float = 1e-12, hard_max: int = 100000) -> int:
    """Smallest K whose next geometric weight r^K/(1+eps) is below rel times the running sum."""
    from .errors import TruncationFailure
    r = epsilon / (1 + epsilon)
    term = 1 / (1 + epsilon)
    total = 0.0
    for K in range(hard_max):
        total += term
        term *= r
        if term < rel * total:
            return K
    raise TruncationFailure(f"dressing does not converge below {hard_max} photons at eps={epsilon}")


def _b0_projector(povm: Povm) -> ModeOp:
    psf = povm.psf
    if isinstance(psf, Psf2D):
        from .basis import gram_schmidt_basis
        b2 = Basis2D(gram_schmidt_basis(psf.fx, 0), gram_schmidt_basis(psf.fy, 0))
        return ModeOp(b2, np.ones((1, 1)))
    from .basis import gram_schmidt_basis
    return ModeOp(gram_schmidt_basis(psf, 0), np.ones(1))


def dressed_povm(base: Povm, mode: str = "summed", epsilon: float | None = None,
                 kmax: int | None = None, tol: float = 1e-10) -> Povm:
    """Dress every outcome of ``base`` with photons in the fundamental mode b0.

    An outcome whose operator contains b0 is split: a projector onto b0 itself
    becomes the ``fundamental`` outcome, a parity sector containing b0 keeps
    its remainder (sector minus b0) as a dressed outcome. Operators that
    neither annihilate nor contain b0 (pixels, b0 +- b1 pairs) are rejected.
    ``mode="per-count"`` resolves the photon number up to ``kmax`` (default
    from the geometric tail at ``epsilon``).
    """
    if base.dressing is not None:
        raise UnsupportedBase("base POVM is already dressed")
    if mode not in ("summed", "per-count"):
        raise ValidationError("mode must be 'summed' or 'per-count'")
    if mode == "per-count" and kmax is None:
        if epsilon is None:
            raise ValidationError("per-count dressing needs epsilon or kmax")
        kmax = dressing_cutoff(epsilon)
    counts = [None] if mode == "summed" else list(range(kmax + 1))
    b0 = base.b0
    p0 = _b0_projector(base)
    dressed_ops, has_fund = [], False
    for o in base.outcomes:
        if o.kind in ("vacuum", "bucket"):
            continue
        if o.kind != "single" or o.op.kind not in ("mode", "parity"):
            raise UnsupportedBase(f"outcome {o.label!r} is not a mode projector or parity sector")
        e00 = float(o.op.matrix(b0, b0)[0, 0].real)
        if e00 < tol:
            dressed_ops.append((o.label, o.op))
        elif o.op.kind == "mode" and e00 > 1 - tol:
            has_fund = True
        elif o.op.kind == "parity" and e00 > 1 - tol:
            has_fund = True
            dressed_ops.append((o.label + "-b0", CombinedOp(((1.0, o.op), (-1.0, p0)))))
        else:
            raise UnsupportedBase(f"outcome {o.label!r} neither contains nor annihilates b0")
    singles = []
    for c in counts:
        tag = "" if c is None else f"|{c}"
        if has_fund:
            singles.append(OutcomeOp("fund" + tag, "fundamental", p0, c))
        for lab, op in dressed_ops:
            singles.append(OutcomeOp(lab + "~" + tag, "dressed", op, c))
    outs = [OutcomeOp("vac", "vacuum")] + singles + [OutcomeOp("bucket", "bucket")]
    return Povm(f"dressed:{base.label}" + ("" if c is None else "/k"), tuple(outs),
                base.psf, b0, mode)
