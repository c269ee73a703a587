"""Outcome probabilities for thermal point sources.

Code paths:

* ``weak_exact_probs``: first order in epsilon, exact in the scene geometry.
* ``weak_series``: the same expanded in moments, P = sum_k eps p_k rad_k / k!.
* ``strong_series``: all orders in epsilon, second order in the scene size.
* ``thermal_exact_probs``: closed-form Gaussian integrals, exact in both.
* ``mc_gaussian_oracle``: Monte Carlo over the thermal field amplitudes.

Scenes are expressed in the POVM frame: the measurement basis is centred at
x = 0 (and y = 0), and moments are taken about that origin.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    CentroidFrameMismatch,
    OutsideConvergenceRadius,
    SubspaceTruncationWarning,
    UnsupportedPattern,
    ValidationError,
    WeakRegimeWarning,
)
from .povm import IdentityOp, Povm, dressing_cutoff, field_gram
from .psf import Psf2D, convergence_radius_lower_bound
from .scene import MomentVector, Scene, moments

NULL_TOL = 1e-11      # series coefficients below this (relative) are roundoff


@dataclass(frozen=True, eq=False)
class Probabilities:
    labels: tuple
    values: np.ndarray
    se: np.ndarray | None = None

    def __getitem__(self, label):
        return float(self.values[self.labels.index(label)])

    def as_dict(self) -> dict:
        return dict(zip(self.labels, map(float, self.values)))


# ==========================================================================
# fields and frames
# ==========================================================================

def source_fields(scene: Scene, psf):
    if isinstance(psf, Psf2D):
        if scene.dimension != 2:
            raise ValidationError("2D PSF needs a 2D scene")
        fx = np.array([psf.fx.derivative(0, x) for x in scene.points[:, 0]])
        fy = np.array([psf.fy.derivative(0, y) for y in scene.points[:, 1]])
        return fx, fy
    if scene.dimension != 1:
        raise ValidationError("1D PSF needs a 1D scene")
    return np.array([psf.derivative(0, x) for x in scene.points])


def _check_frame(scene: Scene, povm: Povm, require_centroid: bool):
    if not require_centroid:
        return
    c = np.atleast_1d(scene.centroid)
    sigma = povm.psf.fx.sigma if isinstance(povm.psf, Psf2D) else povm.psf.sigma
    if np.max(np.abs(c)) > 1e-9 * sigma:
        raise CentroidFrameMismatch(f"scene centroid {c} is not at the measurement frame origin; "
                                    "translate the scene or pass require_centroid=False")


def _single_ops(povm: Povm):
    ident = IdentityOp(povm.grids)
    return [ident if o.kind == "bucket" else o.op for o in povm.outcomes]


def _mats(povm: Povm, bra, ket) -> list:
    return [None if o.kind in ("vacuum", "bucket") else o.op.matrix(bra, ket) for o in povm.outcomes]


# ==========================================================================
# weak source, exact geometry
# ==========================================================================

def weak_exact_probs(scene: Scene, povm: Povm, require_centroid: bool = True) -> Probabilities:
    """P(n) = (1-eps)<0|E|0> + eps sum_j gamma_j <psi_j|E|psi_j>."""
    _check_frame(scene, povm, require_centroid)
    eps = scene.epsilon
    if eps > 0.1:
        warnings.warn(f"weak-source probabilities used at eps={eps}", WeakRegimeWarning, stacklevel=2)
    f = source_fields(scene, povm.psf)
    P = np.zeros(len(povm))
    for i, (o, W) in enumerate(zip(povm.outcomes, _mats(povm, f, f))):
        if o.kind == "vacuum":
            P[i] = 1 - eps
        elif o.kind == "bucket":
            continue
        elif o.count in (None, 0):
            P[i] = eps * float(scene.gamma @ np.diag(W).real)
    P[[o.kind == "bucket" for o in povm.outcomes]] = 1 - P.sum()
    return Probabilities(tuple(povm.labels), P)


# ==========================================================================
# series container
# ==========================================================================

def _order(key) -> int:
    return key if np.ndim(key) == 0 else int(sum(key))


@dataclass(frozen=True, eq=False)
class ProbSeries:
    """P(n) = const(n) + sum over monomials of coef(n) * prod(rad_key).

    ``terms`` maps a monomial (tuple of moment keys, repeated for powers) to
    an array over outcomes.
    """

    labels: tuple
    epsilon: float
    const: np.ndarray
    terms: dict
    kmax: int
    dimension: int
    regime: str
    r0: float | None = None
    meta: dict = field(default_factory=dict)

    def keys(self) -> set:
        return {k for mono in self.terms for k in mono}

    def evaluate(self, mv: MomentVector) -> np.ndarray:
        P = self.const.copy()
        for mono, c in self.terms.items():
            P = P + c * math.prod(mv.rad[k] for k in mono)
        return P

    def gradient(self, mv: MomentVector, key) -> np.ndarray:
        """dP/dM_key with M_key the magnitude |rad_key|^(1/order)."""
        order = _order(key)
        M = mv.magnitude(key)
        drad = mv.sign(key) * order * M ** (order - 1) if order > 1 else mv.sign(key)
        g = np.zeros_like(self.const)
        for mono, c in self.terms.items():
            n = mono.count(key)
            if n == 0:
                continue
            rest = list(mono)
            rest.remove(key)
            g = g + c * math.prod(mv.rad[k] for k in rest) * drad
        return g

    def p_k(self, key) -> np.ndarray:
        """Unnormalized weak coefficient p_k(n) = k! * coef / eps (weak regime only)."""
        if self.regime != "weak":
            raise ValidationError("p_k is defined for weak series only")
        fact = math.factorial(key) if np.ndim(key) == 0 else math.factorial(key[0]) * math.factorial(key[1])
        return self.terms.get((key,), np.zeros_like(self.const)) * fact / self.epsilon

    def remainder_bound(self, mv: MomentVector) -> float:
        """Bound on |P_exact - P_series| for the weak series (see module notes)."""
        if self.r0 is None:
            return math.nan
        # |p_k|/k! <= (k+1)/R0^k and |rad_k| <= reach^k
        x = mv.reach / self.r0
        if x >= 1:
            return math.inf
        K = self.kmax
        # eps * sum_{k>K} (k+1) x^k in closed form
        tail = x ** (K + 1) * ((K + 2) - (K + 1) * x) / (1 - x) ** 2
        return self.epsilon * tail


# ==========================================================================
# weak series
# ==========================================================================

def _derivative_fields(psf, kmax: int):
    if isinstance(psf, Psf2D):
        idx = [(a, b) for t in range(kmax + 1) for a in range(t + 1) for b in [t - a]]
        fx = np.array([psf.fx.xbar_derivative(a) for a, _ in idx])
        fy = np.array([psf.fy.xbar_derivative(b) for _, b in idx])
        return idx, (fx, fy)
    return list(range(kmax + 1)), np.array([psf.xbar_derivative(a) for a in range(kmax + 1)])


def _outcome_matrix(op, D, norms):
    """Single-photon matrix between derivative fields with roundoff nulled.

    Mode projectors are orthogonal to lower derivatives by construction, so
    amplitudes below NULL_TOL of the derivative norm are set to zero. Parity
    and combined operators only get entries at roundoff level (relative to
    the Cauchy-Schwarz bound) removed; pixels are left untouched.
    """
    if op.kind == "mode":
        o = op.amplitudes(D)
        o = np.where(np.abs(o) < NULL_TOL * norms, 0.0, o)
        return np.outer(o.conj(), o)
    mat = op.matrix(D, D)
    if op.kind == "pixel":
        # no structural zeros; tiny tail entries are genuine
        return mat
    return np.where(np.abs(mat) < 1e-15 * np.outer(norms, norms), 0.0, mat)


def _series_coefficients(mat, idx, dim):
    """coef_key = sum over index pairs adding to key of Mat / factorials."""
    out = {}
    fact = [math.factorial(a) if dim == 1 else math.factorial(a[0]) * math.factorial(a[1]) for a in idx]
    top = _order(idx[-1])
    for i, a in enumerate(idx):
        for j, c in enumerate(idx):
            key = a + c if dim == 1 else (a[0] + c[0], a[1] + c[1])
            if _order(key) <= top:
                out[key] = out.get(key, 0.0) + mat[i, j] / (fact[i] * fact[j])
    return {k: float(v.real) for k, v in out.items()}


def weak_series(povm: Povm, kmax: int = 8, epsilon: float | None = None,
                scene: Scene | None = None) -> ProbSeries:
    """Moment expansion of the weak-source probabilities to total order ``kmax``.

    With ``scene`` given, epsilon is taken from it and the scene size is
    checked against the convergence radius.
    """
    if scene is not None:
        epsilon = scene.epsilon
    if epsilon is None:
        raise ValidationError("weak_series needs epsilon or a scene")
    psf = povm.psf
    dim = povm.dimension
    factors = (psf.fx, psf.fy) if dim == 2 else (psf,)
    r0 = min(convergence_radius_lower_bound(f, min(f.lmax, 12)) for f in factors)
    if scene is not None and scene.size >= r0:
        raise OutsideConvergenceRadius(f"scene size {scene.size:g} >= convergence radius {r0:g}")
    idx, D = _derivative_fields(psf, kmax)
    norms = np.sqrt(np.abs(np.diag(field_gram(D, D, povm.grids))))
    ident = IdentityOp(povm.grids).matrix(D, D)
    # symmetry zeros of the identity (odd orders for an even PSF) come out at
    # roundoff and would otherwise survive into the bucket
    ident = np.where(np.abs(ident) < 1e-15 * np.outer(norms, norms), 0.0, ident)
    rows = []
    for o in povm.outcomes:
        if o.kind == "vacuum" or o.kind == "bucket" or o.count not in (None, 0):
            rows.append({})
        else:
            rows.append(_series_coefficients(_outcome_matrix(o.op, D, norms), idx, dim))
    ident_c = _series_coefficients(ident, idx, dim)
    keys = sorted(ident_c.keys(), key=lambda k: (_order(k), k))
    n = len(povm)
    const = np.zeros(n)
    terms = {}
    bucket = [i for i, o in enumerate(povm.outcomes) if o.kind == "bucket"]
    for key in keys:
        c = np.array([epsilon * r.get(key, 0.0) for r in rows])
        if bucket:
            # identity minus the listed outcomes; cancellation noise is nulled
            resid = epsilon * ident_c[key] - c.sum()
            scale = epsilon * abs(ident_c[key]) + np.abs(c).sum()
            c[bucket[0]] = resid if abs(resid) > NULL_TOL * scale else 0.0
        if _order(key) == 0:
            const += c
        elif np.any(c):
            terms[(key,)] = c
    for i, o in enumerate(povm.outcomes):
        if o.kind == "vacuum":
            const[i] = 1 - epsilon
    return ProbSeries(tuple(povm.labels), float(epsilon), const, terms, kmax, dim, "weak", r0)


# ==========================================================================
# strong source, O(s^2)
# ==========================================================================

def _omega(eps: float, n: int) -> np.ndarray:
    r = eps / (1 + eps)
    return r ** np.arange(n) / (1 + eps)


def strong_series(povm: Povm, epsilon: float) -> ProbSeries:
    """Q0 + Q1 rad1 + Q2 up to second order in the scene, all orders in epsilon.

    Moments are about the frame origin, so rad1 is the centroid offset.
    """
    if povm.dimension != 1:
        raise ValidationError("strong_series is implemented for 1D POVMs")
    eps = float(epsilon)
    K = dressing_cutoff(eps) + 3
    counts = [o.count for o in povm.outcomes if o.count is not None]
    K = max(K, max(counts, default=0) + 3)
    w = _omega(eps, K + 2)
    ks = np.arange(K + 1)
    psf = povm.psf
    D = np.array([psf.xbar_derivative(a) for a in range(3)])
    s11 = float(field_gram(D[1], D[1], povm.grids)[0, 0].real)
    s02 = float(field_gram(D[0], D[2], povm.grids)[0, 0].real)
    ov = field_gram(D[0], D, povm.grids)[0]       # <psi|psi^(a)>
    n = len(povm)
    Q0, Q1, C2, C11 = (np.zeros(n) for _ in range(4))
    for i, o in enumerate(povm.outcomes):
        if o.kind == "bucket":
            continue
        e_pure, e_lin1, e_lin2, e_one, e_two = (np.zeros(K + 1, dtype=complex) for _ in range(5))
        sel = np.ones(K + 1, dtype=bool) if o.count is None else ks == o.count
        if o.kind == "vacuum":
            e_pure[0] = 1.0
        elif o.kind == "single":
            Mt = o.op.matrix(D, D)
            e_pure[1], e_lin1[1], e_lin2[1] = Mt[0, 0], Mt[0, 1], Mt[0, 2]
            e_one[0] = Mt[1, 1]
        elif o.kind == "dressed":
            Mt = o.op.matrix(D, D)
            e_one[sel] = Mt[1, 1]
        elif o.kind == "fundamental":
            # count c means c + 1 photons, all in b0
            up = np.zeros(K + 1, dtype=bool)
            up[1:] = sel[:-1]
            e_pure[up] = 1.0
            e_lin1[up] = ov[1]
            e_lin2[up] = ov[2]
            e_one[sel] = (ks[sel] + 1) * abs(ov[1]) ** 2
            e_two[up & (ks >= 2)] = ov[1] ** 2
        wk = w[: K + 1]
        wk1 = w[1: K + 2]
        wkm1 = np.concatenate(([0.0], w[:K]))
        e_one_shift = np.concatenate(([0.0], e_one[:K]))   # e_one(k-1)
        Q0[i] = np.sum(wk * e_pure.real)
        Q1[i] = np.sum(2 * ks * wk * e_lin1.real)
        C11[i] = (np.sum(e_one_shift.real * (ks * wk - eps * wkm1))
                  + np.sum(ks * (ks - 1) * wk * e_two.real)
                  + np.sum(e_pure.real * (-s11 * (ks + 1) * wk1 + s11 * eps * wk)))
        C2[i] = (np.sum(e_one_shift.real * eps * wkm1)
                 + np.sum(ks * wk * e_lin2.real)
                 + np.sum(e_pure.real * (-s11 * eps * wk - s02 * (ks + 1) * wk1)))
    for i, o in enumerate(povm.outcomes):
        if o.kind == "bucket":
            Q0[i] = 1 - Q0.sum()
            Q1[i], C2[i], C11[i] = -Q1.sum(), -C2.sum(), -C11.sum()
    terms = {(1,): Q1, (2,): C2, (1, 1): C11}
    return ProbSeries(tuple(povm.labels), eps, Q0, terms, 2, 1, "strong", None, {"cutoff": K})


# ==========================================================================
# exact thermal probabilities
# ==========================================================================

def _thermal_inputs(scene: Scene, povm: Povm):
    f = source_fields(scene, povm.psf)
    S = field_gram(f, f, povm.grids)
    g0 = field_gram(povm.b0, f, povm.grids)[0]     # <b0|psi_j>
    mats = _mats(povm, f, f)
    return S, g0, mats


def thermal_exact_probs(scene: Scene, povm: Povm, require_centroid: bool = False) -> Probabilities:
    """Exact outcome probabilities for independent thermal sources.

    alpha ~ CN(0, diag(eps gamma)); every outcome functional is a Gaussian
    integral. With C = (I + Gamma S)^-1 Gamma, D0 = det(I + Gamma S),
    lam = <b0|C|b0> and mu = <b0|C W C|b0> in source coordinates.
    """
    _check_frame(scene, povm, require_centroid)
    S, g0, mats = _thermal_inputs(scene, povm)
    G = np.diag(scene.epsilon * scene.gamma)
    A = np.eye(len(G)) + G @ S
    C = np.linalg.solve(A, G)
    D0 = float(np.linalg.det(A).real)
    lam = float((g0 @ C @ g0.conj()).real)
    P = np.zeros(len(povm))
    for i, (o, W) in enumerate(zip(povm.outcomes, mats)):
        k = o.count
        if o.kind == "vacuum":
            P[i] = 1 / D0
        elif o.kind == "bucket":
            continue
        elif o.kind == "fundamental":
            P[i] = (1 / (1 - lam) - 1) / D0 if k is None else lam ** (k + 1) / D0
        else:
            tau = float(np.trace(W @ C).real)
            if o.kind == "single":
                P[i] = tau / D0
            else:
                mu = float((g0 @ C @ W @ C @ g0.conj()).real)
                if k is None:
                    P[i] = (tau + mu / (1 - lam)) / (D0 * (1 - lam))
                else:
                    P[i] = (tau * lam**k + (k * mu * lam ** (k - 1) if k else 0.0)) / D0
    P[[o.kind == "bucket" for o in povm.outcomes]] = 1 - P.sum()
    return Probabilities(tuple(povm.labels), P)


# ==========================================================================
# Wick closed forms
# ==========================================================================

WICK_PATTERNS = {
    "pure": "E[exp(-|A0|^2) |A0|^(2k)]",
    "lin1": "E[exp(-|A0|^2) conj(A0)^(k-1) conj(A1) A0^k]",
    "one": "E[exp(-|A0|^2) |A0|^(2(k-1)) |A_l|^2]  (l = ell, default 1)",
    "lin2": "E[exp(-|A0|^2) |A0|^(2(k-1)) conj(A2) A0]",
    "two1": "E[exp(-|A0|^2) conj(A0)^(k-2) conj(A1)^2 A0^k]",
}


def _wk(k: int, eps: float) -> float:
    if k < 0:
        return 0.0
    return math.exp(math.lgamma(k + 1) + k * math.log(eps) - (k + 1) * math.log1p(eps)) if eps > 0 else float(k == 0)


def wick_expectation(pattern: str, k: int, epsilon: float, mv: MomentVector, ell: int = 1) -> float:
    """Closed-form thermal expectation; A_l = sum_j alpha_j (x_j - X0)^l.

    Moments in ``mv`` must be about the same origin X0.
    """
    if pattern not in WICK_PATTERNS:
        raise UnsupportedPattern(f"pattern {pattern!r} has no closed form; use the Monte Carlo oracle")
    eps = float(epsilon)
    rad = mv.rad
    if pattern == "pure":
        return _wk(k, eps)
    if pattern == "lin1":
        return rad[1] * _wk(k, eps) if k >= 1 else 0.0
    if pattern == "one":
        if k < 1:
            raise UnsupportedPattern("pattern 'one' needs k >= 1")
        return rad[ell] ** 2 * _wk(k, eps) + eps * (rad[2 * ell] - rad[ell] ** 2) * _wk(k - 1, eps)
    if pattern == "lin2":
        if k < 1:
            raise UnsupportedPattern("pattern 'lin2' needs k >= 1")
        return rad[2] * _wk(k, eps)
    if k < 2:
        raise UnsupportedPattern("pattern 'two1' needs k >= 2")
    return rad[1] ** 2 * _wk(k, eps)


def _draw_alpha(rng, scale: np.ndarray, n: int) -> np.ndarray:
    z = rng.standard_normal((n, scale.size)) + 1j * rng.standard_normal((n, scale.size))
    return z * np.sqrt(scale / 2)


def _block_streams(seed, samples: int, block: int):
    n_blocks = -(-samples // block)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    for b, ss in enumerate(children):
        yield np.random.default_rng(ss), min(block, samples - b * block)


def _reduce(sums, sqs, N):
    mean = np.array([math.fsum(c) for c in zip(*sums)]) / N
    sq = np.array([math.fsum(c) for c in zip(*sqs)]) / N
    var = np.maximum(sq - mean**2, 0.0) * N / (N - 1)
    return mean, np.sqrt(var / N)


def amplitude_monte_carlo(functional, scene: Scene, lmax: int, samples: int = 10**6, seed=0,
                          origin=None, block: int = 1 << 16):
    """Mean and standard error of ``functional(A)`` over thermal amplitudes.

    ``A`` has shape (n, lmax+1) with A[:, l] = sum_j alpha_j (x_j - X0)^l and
    the functional returns one real value per sample (shape (n,) or (n, m)).
    """
    x0 = scene.centroid if origin is None else origin
    d = scene.points - x0
    powers = np.array([d**l for l in range(lmax + 1)])    # (lmax+1, J)
    scale = scene.epsilon * scene.gamma
    sums, sqs = [], []
    for rng, n in _block_streams(seed, samples, block):
        v = np.asarray(functional(_draw_alpha(rng, scale, n) @ powers.T), dtype=float)
        v = v.reshape(n, -1)
        sums.append(v.sum(axis=0))
        sqs.append((v * v).sum(axis=0))
    return _reduce(sums, sqs, samples)


def wick_monte_carlo(pattern: str, k: int, scene: Scene, samples: int = 10**6, seed=0,
                     origin=None, ell: int = 1, block: int = 1 << 16):
    """Sample estimate (mean, standard error) of a Wick pattern."""
    if pattern not in WICK_PATTERNS:
        raise UnsupportedPattern(pattern)

    def functional(a):
        A0 = a[:, 0]
        e = np.exp(-np.abs(A0) ** 2)
        if pattern == "pure":
            return e * np.abs(A0) ** (2 * k)
        if pattern == "lin1":
            return (e * np.conj(A0) ** (k - 1) * np.conj(a[:, 1]) * A0**k).real
        if pattern == "one":
            return e * np.abs(A0) ** (2 * (k - 1)) * np.abs(a[:, ell]) ** 2
        if pattern == "lin2":
            return (e * np.abs(A0) ** (2 * (k - 1)) * np.conj(a[:, 2]) * A0).real
        return (e * np.conj(A0) ** (k - 2) * np.conj(a[:, 1]) ** 2 * A0**k).real

    mean, se = amplitude_monte_carlo(functional, scene, max(2, 2 * ell), samples, seed, origin, block)
    return float(mean[0]), float(se[0])


# ==========================================================================
# Monte Carlo probability oracle
# ==========================================================================

_CODES = {"vacuum": _kernels.VACUUM, "single": _kernels.PLAIN, "bucket": _kernels.BUCKET}


def _kind_codes(povm: Povm):
    kinds, counts = [], []
    for o in povm.outcomes:
        if o.kind == "dressed":
            kinds.append(_kernels.DRESSED_SUM if o.count is None else _kernels.DRESSED_K)
        elif o.kind == "fundamental":
            kinds.append(_kernels.FUND_SUM if o.count is None else _kernels.FUND_K)
        else:
            kinds.append(_CODES[o.kind])
        counts.append(-1 if o.count is None else o.count)
    return np.array(kinds, dtype=np.int64), np.array(counts, dtype=np.int64)


def mc_gaussian_oracle(scene: Scene, povm: Povm, samples: int = 10**6, seed=0,
                       block: int = 1 << 16, require_centroid: bool = False) -> Probabilities:
    """Unbiased sample average of the outcome functionals over thermal amplitudes.

    Blocks draw from independent SeedSequence children, so the estimate is
    a deterministic function of ``seed`` whatever the block scheduling.
    """
    if samples < 10**4:
        raise ValidationError("the oracle needs at least 1e4 samples")
    _check_frame(scene, povm, require_centroid)
    if povm.dressing == "per-count":
        K = max(o.count for o in povm.outcomes if o.count is not None)
        tail = (scene.epsilon / (1 + scene.epsilon)) ** (K + 1)
        if tail > 1e-6:
            warnings.warn(f"dressed photon-number tail mass {tail:.2e} lands in the bucket",
                          SubspaceTruncationWarning, stacklevel=2)
    S, g0, mats = _thermal_inputs(scene, povm)
    J = S.shape[0]
    W = np.array([np.zeros((J, J)) if m is None else m for m in mats], dtype=complex)
    kinds, counts = _kind_codes(povm)
    scale = scene.epsilon * scene.gamma
    S = np.ascontiguousarray(S, dtype=complex)
    g0 = np.ascontiguousarray(g0, dtype=complex)
    sums, sqs = [], []
    for rng, n in _block_streams(seed, samples, block):
        F = _kernels.mc_functionals(_draw_alpha(rng, scale, n), S, g0, W, kinds, counts)
        sums.append(F.sum(axis=0))
        sqs.append((F * F).sum(axis=0))
    mean, se = _reduce(sums, sqs, samples)
    return Probabilities(tuple(povm.labels), mean, se)
