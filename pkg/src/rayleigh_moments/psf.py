"""Point-spread functions, quadrature grids and their derivatives.

Lengths are in the same units as ``sigma``. Every PSF is sampled on a uniform
grid with trapezoid weights, and derivatives are spatial: ``derivative(n)``
returns d^n/dx^n psi(x - shift). Derivatives with respect to the centroid
are ``(-1)**n`` times those (see ``xbar_derivative``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import hermite_e

from .errors import (
    GridMismatch,
    NotDifferentiable,
    OrderTooHigh,
    PsfAssumptionViolated,
    ValidationError,
)

PROP_TOL = 1e-8          # relative tolerance for the odd/even orthogonality check
SPECTRAL_FLOOR = 1e-13   # |F| below this fraction of the peak counts as noise
_GL_NODES = 128


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size < 3:
            raise ValidationError("grid needs matching 1D node/weight arrays with at least 3 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValidationError("grid nodes must be strictly increasing")
        if np.any(weights <= 0):
            raise ValidationError("grid weights must be positive")
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> Grid:
        x = np.linspace(lo, hi, n)
        w = np.full(n, x[1] - x[0])
        w[0] = w[-1] = 0.5 * (x[1] - x[0])
        return cls(x, w)

    @classmethod
    def from_nodes(cls, x) -> Grid:
        """Trapezoid grid on given uniform nodes."""
        x = np.asarray(x, dtype=float)
        h = np.diff(x)
        if x.size < 3 or not np.allclose(h, h[0], rtol=1e-9, atol=0):
            raise ValidationError("sampled PSF nodes must be uniformly spaced")
        return cls.uniform(x[0], x[-1], x.size)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def span(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        scale = max(abs(self.nodes[0]), abs(self.nodes[-1]))
        return bool(np.all(np.abs(self.nodes + self.nodes[::-1]) <= tol * scale))

    def matches(self, other: Grid) -> bool:
        return self is other or (self.size == other.size and np.array_equal(self.nodes, other.nodes))


def default_grid(sigma: float = 1.0, n: int = 2048, span: float = 10.0) -> Grid:
    return Grid.uniform(-span * sigma, span * sigma, n)


def inner_product(f, g, grid: Grid):
    """Quadrature of conj(f) * g along the last axis."""
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape[-1] != grid.size or g.shape[-1] != grid.size:
        raise GridMismatch(f"arrays of length {f.shape[-1]} and {g.shape[-1]} "
                           f"do not live on a grid of {grid.size} nodes")
    return np.sum(grid.weights * np.conj(f) * g, axis=-1)


def gram(F, G, grid: Grid) -> np.ndarray:
    """Matrix of inner products <F_i|G_j> for stacked grid functions."""
    F = np.atleast_2d(F)
    G = np.atleast_2d(G)
    if F.shape[-1] != grid.size or G.shape[-1] != grid.size:
        raise GridMismatch("function stack does not match grid")
    return (np.conj(F) * grid.weights) @ G.T


# ==========================================================================
# 1D models
# ==========================================================================

@dataclass(frozen=True, eq=False)
class PsfModel:
    """A normalized 1D PSF. Build with ``gaussian``, ``sinc`` or ``sampled``."""

    kind: str
    sigma: float
    grid: Grid
    lmax: int = 24
    values: np.ndarray | None = None
    norm: float = 1.0

    dimension = 1

    def __post_init__(self):
        if self.kind not in ("gaussian", "sinc", "sampled"):
            raise ValidationError(f"unknown PSF kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if self.values is not None:
            object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=complex)))

    # -- evaluation --------------------------------------------------------
    def derivative(self, order: int, shift: float = 0.0, points=None) -> np.ndarray:
        """d^order/dx^order of psi(x - shift) on the grid (or at ``points``)."""
        order = int(order)
        if order < 0:
            raise ValidationError("derivative order must be non-negative")
        if order > self.lmax:
            raise OrderTooHigh(f"order {order} exceeds lmax={self.lmax} for {self.kind} PSF")
        x = self.grid.nodes if points is None else np.asarray(points, dtype=float)
        if self.kind == "gaussian":
            return _gaussian_derivative(order, x - shift, self.sigma)
        if self.kind == "sinc":
            return self.norm * _sinc_derivative(order, x - shift, self.sigma)
        if points is not None:
            raise ValidationError("sampled PSFs can only be evaluated on their own grid")
        return self._spectral_derivative(order, shift)

    def xbar_derivative(self, order: int, shift: float = 0.0) -> np.ndarray:
        """d^order/dXbar^order of psi(x - Xbar) at Xbar = shift."""
        return (-1) ** order * self.derivative(order, shift)

    def derivative_norm(self, order: int) -> float:
        d = self.derivative(order)
        return float(np.sqrt(inner_product(d, d, self.grid).real))

    # -- sampled PSFs ------------------------------------------------------
    @cached_property
    def _spectrum(self):
        k = 2 * np.pi * np.fft.fftfreq(self.grid.size, self.grid.spacing)
        F = np.fft.fft(self.values)
        kb = _bandwidth(k, F)
        # half-Hann roll-off from kb to 1.5 kb keeps roundoff from being amplified by k^n
        r = np.clip((np.abs(k) - kb) / (0.5 * kb), 0.0, 1.0)
        taper = np.cos(0.5 * np.pi * r) ** 2
        return k, taper, F

    def _spectral_derivative(self, order: int, shift: float) -> np.ndarray:
        k, taper, F = self._spectrum
        G = F * (1j * k) ** order * taper
        if shift:
            G = G * np.exp(-1j * k * shift)
        return np.fft.ifft(G)


def _bandwidth(k: np.ndarray, F: np.ndarray) -> float:
    mag = np.abs(F)
    live = mag > SPECTRAL_FLOOR * mag.max()
    return float(np.abs(k[live]).max()) or float(np.abs(k[1]))


def _gaussian_derivative(n: int, x: np.ndarray, sigma: float) -> np.ndarray:
    a = math.sqrt(2.0) * sigma
    u = x / a
    coef = np.zeros(n + 1)
    coef[n] = 1.0
    norm = (2 * math.pi * sigma**2) ** -0.25
    return norm * (-1.0 / a) ** n * hermite_e.hermeval(u, coef) * np.exp(-0.5 * u * u)


_gl_nu, _gl_w = np.polynomial.legendre.leggauss(_GL_NODES)
_gl_nu = 0.5 * _gl_nu
_gl_w = 0.5 * _gl_w


def _sinc_derivative(n: int, x: np.ndarray, sigma: float) -> np.ndarray:
    # sinc(t) = int_{-1/2}^{1/2} exp(2 pi i nu t) d nu, differentiate under the integral
    t = np.asarray(x, dtype=float) / sigma
    if n == 0:
        return np.sinc(t) / math.sqrt(sigma)
    kern = _gl_w * (2j * np.pi * _gl_nu) ** n
    val = np.exp(2j * np.pi * np.multiply.outer(t, _gl_nu)) @ kern
    return val.real * sigma ** (-n) / math.sqrt(sigma)


def gaussian(sigma: float = 1.0, grid: Grid | None = None, lmax: int = 24) -> PsfModel:
    return PsfModel("gaussian", float(sigma), grid or default_grid(sigma), lmax)


def sinc(sigma: float = 1.0, grid: Grid | None = None, lmax: int = 24) -> PsfModel:
    grid = grid or default_grid(sigma)
    raw = _sinc_derivative(0, grid.nodes, sigma)
    norm = 1.0 / math.sqrt(inner_product(raw, raw, grid).real)
    return PsfModel("sinc", float(sigma), grid, lmax, norm=norm)


def sampled(grid: Grid, values, sigma: float | None = None, lmax: int = 6,
            check_orders: int = 8) -> PsfModel:
    """PSF from samples on a uniform grid. Normalizes and validates on load.

    ``sigma`` is only a length scale for basis conditioning; by default it is
    the rms width of |psi|^2.
    """
    values = np.asarray(values, dtype=complex)
    if values.shape != (grid.size,):
        raise GridMismatch("sampled PSF values do not match grid")
    nrm = math.sqrt(inner_product(values, values, grid).real)
    if not nrm > 0:
        raise ValidationError("sampled PSF is identically zero")
    values = values / nrm
    k = 2 * np.pi * np.fft.fftfreq(grid.size, grid.spacing)
    if _bandwidth(k, np.fft.fft(values)) > 0.5 * np.pi / grid.spacing:
        raise NotDifferentiable("sampled PSF has spectral content above half the Nyquist "
                                "frequency; sample more finely or widen the window so the PSF "
                               "decays at its edges")
    if sigma is None:
        p = np.abs(values) ** 2 * grid.weights
        mu = np.sum(p * grid.nodes)
        sigma = math.sqrt(np.sum(p * (grid.nodes - mu) ** 2))
    psf = PsfModel("sampled", float(sigma), grid, lmax, values=values)
    check_prop_1d(psf, min(check_orders, lmax - 1))
    return psf


def load_sampled(path, lmax: int = 6, **kw) -> PsfModel:
    """Read (x, re[, im]) delimited text; commas or whitespace."""
    with open(path) as fh:
        text = fh.read().replace(",", " ")
    data = np.loadtxt(text.splitlines(), ndmin=2)
    if data.shape[1] < 2:
        raise ValidationError("sampled PSF file needs at least x and re columns")
    grid = Grid.from_nodes(data[:, 0])
    vals = data[:, 1] + (1j * data[:, 2] if data.shape[1] > 2 else 0)
    return sampled(grid, vals, lmax=lmax, **kw)


def check_prop_1d(psf: PsfModel, lmax: int, tol: float = PROP_TOL) -> float:
    """Largest relative overlap |<psi^(l), psi^(l+1)>| for l < lmax+1.

    Raises PsfAssumptionViolated above ``tol``.
    """
    worst = 0.0
    prev = psf.derivative(0)
    for l in range(lmax + 1):
        nxt = psf.derivative(l + 1)
        ov = abs(inner_product(prev, nxt, psf.grid))
        scale = math.sqrt(inner_product(prev, prev, psf.grid).real * inner_product(nxt, nxt, psf.grid).real)
        rel = ov / scale if scale > 0 else 0.0
        if rel > tol:
            raise PsfAssumptionViolated(
                f"<psi^({l}), psi^({l + 1})> = {ov:.3e} relative {rel:.3e} > {tol:g}")
        worst = max(worst, rel)
        prev = nxt
    return worst


# ==========================================================================
# 2D
# ==========================================================================

@dataclass(frozen=True, eq=False)
class Psf2D:
    """Separable 2D PSF psi(x, y) = fx(x) fy(y).

    ``circular`` marks a circularly symmetric PSF. Only the Gaussian is both
    circular and separable, so that is the only circular model accepted.
    """

    fx: PsfModel
    fy: PsfModel
    circular: bool = False

    dimension = 2

    def __post_init__(self):
        if self.circular and not (self.fx.kind == self.fy.kind == "gaussian"
                                  and math.isclose(self.fx.sigma, self.fy.sigma, rel_tol=1e-12)):
            raise ValidationError("circular 2D PSFs are supported only as equal-width Gaussians")

    @classmethod
    def gaussian(cls, sigma_x: float = 1.0, sigma_y: float | None = None) -> Psf2D:
        sy = sigma_x if sigma_y is None else sigma_y
        return cls(gaussian(sigma_x), gaussian(sy), circular=sigma_y is None or sy == sigma_x)

    def derivative(self, order: tuple[int, int], shift=(0.0, 0.0)) -> np.ndarray:
        a, b = order
        return np.outer(self.fx.derivative(a, shift[0]), self.fy.derivative(b, shift[1]))


def eval_derivative(psf, order, points=None, shift=0.0):
    """Spatial derivative of the PSF. For 2D PSFs ``order`` is a pair."""
    if isinstance(psf, Psf2D):
        if points is not None:
            raise ValidationError("2D PSFs are evaluated on their tensor grid")
        return psf.derivative(order, shift if np.ndim(shift) else (shift, 0.0))
    if isinstance(points, Grid):
        points = None if points.matches(psf.grid) else points.nodes
    return psf.derivative(order, shift, points)


def delta_k(psf):
    """||d psi|| in 1D; (dk_x, dk_y, r) in 2D."""
    if isinstance(psf, Psf2D):
        dkx = psf.fx.derivative_norm(1)
        dky = psf.fy.derivative_norm(1)
        # <d_x psi, d_y psi> factorizes into <fx', fx><fy, fy'>
        cx = inner_product(psf.fx.derivative(1), psf.fx.derivative(0), psf.fx.grid)
        cy = inner_product(psf.fy.derivative(0), psf.fy.derivative(1), psf.fy.grid)
        return dkx, dky, float((cx * cy).real / (dkx * dky))
    return psf.derivative_norm(1)


def convergence_radius_lower_bound(psf: PsfModel, lmax: int) -> float:
    """R0 = 1 / sup_l (||psi^(l)|| / l!)^(1/l) over 1 <= l <= lmax."""
    if lmax < 1:
        raise ValidationError("lmax must be at least 1")
    if lmax > psf.lmax:
        raise OrderTooHigh(f"lmax {lmax} exceeds {psf.lmax}")
    sup = max((psf.derivative_norm(l) / math.factorial(l)) ** (1.0 / l) for l in range(1, lmax + 1))
    return 1.0 / sup
