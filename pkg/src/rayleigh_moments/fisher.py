"""Fisher information from probability models, closed-form limits and 2D QFIMs.

Moments are treated as independent coordinates: the derivative of P with
respect to M_k acts only on the rad_k factors of the series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import Basis2D, DerivativeBasis
from .errors import (AnisotropicPsf, DegenerateScene, InvalidBeta, NumericalError,
                     OrderTooHigh, SingularFIM, SingularProbability, ValidationError, ZeroEvenMoment)
from .povm import Povm, centroid_povm
from .prob import ProbSeries, amplitude_monte_carlo, strong_series, weak_series
from .psf import Psf2D, delta_k
from .scene import MomentVector, Scene, moments

P_FLOOR = 1e-300
PSD_TOL = 1e-10
SLD_TOL = 1e-14
NULL_Q0 = 1e-12


@dataclass(frozen=True, eq=False)
class FisherReport:
    params: tuple
    matrix: np.ndarray
    regime: str                 # limit-formula | series | exact | qfim
    epsilon: float
    s: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if F.shape != (len(self.params), len(self.params)):
            raise ValidationError(f"matrix shape {F.shape} does not match {len(self.params)} params")
        if not np.all(np.isfinite(F)):
            raise NumericalError("Fisher matrix has non-finite entries")
        scale = max(np.abs(F).max(), 1e-300)
        if np.abs(F - F.T).max() > 1e-9 * scale:
            raise NumericalError("Fisher matrix is not symmetric")
        F = 0.5 * (F + F.T)
        tr = np.trace(F)
        if np.linalg.eigvalsh(F).min() < -PSD_TOL * max(tr, 1e-300):
            raise NumericalError("Fisher matrix is not positive semidefinite")
        F.setflags(write=False)
        object.__setattr__(self, "matrix", F)

    def entry(self, a, b=None):
        i = self.params.index(a)
        j = i if b is None else self.params.index(b)
        return float(self.matrix[i, j])

    def as_dict(self) -> dict:
        return {"params": [str(p) for p in self.params], "matrix": self.matrix.tolist(),
                "regime": self.regime, "epsilon": self.epsilon, "s": self.s}


# ==========================================================================
# classical FI
# ==========================================================================

def fisher_information(P, grads, labels=None) -> np.ndarray:
    """F_ab = sum_n dP_a dP_b / P over outcomes.

    ``grads`` has shape (n_params, n_outcomes). Outcomes with negligible P
    and zero derivative are skipped.
    """
    P = np.asarray(P, dtype=float)
    G = np.atleast_2d(np.asarray(grads, dtype=float))
    small = P <= P_FLOOR
    if np.any(small):
        bad = small & np.any(G != 0, axis=0)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            name = labels[i] if labels is not None else i
            raise SingularProbability(name)
    keep = ~small
    Gk = G[:, keep]
    return (Gk / P[keep]) @ Gk.T


def _key_order(key) -> int:
    return key if np.ndim(key) == 0 else int(sum(key))


def fi_from_series(series: ProbSeries, params, at: MomentVector) -> FisherReport:
    params = tuple(p if np.ndim(p) == 0 else tuple(p) for p in params)
    top = max(_key_order(p) for p in params)
    if series.regime == "weak" and top + 2 > series.kmax:
        raise OrderTooHigh(f"series order {series.kmax} must cover requested order {top} + 2")
    if series.regime == "strong" and top > 2:
        raise OrderTooHigh("the strong series only reaches second order")
    P = series.evaluate(at)
    G = np.array([series.gradient(at, p) for p in params])
    F = fisher_information(P, G, series.labels)
    return FisherReport(params, F, "series", series.epsilon, at.size, {"kmax": series.kmax})


# ==========================================================================
# closed-form subdiffraction limits
# ==========================================================================

def _M(mv: MomentVector, key) -> float:
    return mv.magnitude(key)


def fi_limit_formulas(basis, mv: MomentVector, epsilon: float, which: str,
                      ell: int | None = None, K: int | None = None, L: int | None = None) -> FisherReport:
    """Leading-order FI for one moment under the matched derivative-mode POVM.

    which: 'even' (M_2l), 'odd' (M_2l+1), 'second' (M_2), or for 2D bases
    '2d-even' (M_{2L,2K-2L}), '2d-b12' (M_{2L+1,2K-2L-1}), '2d-b34'
    (M_{2L+1,2K-2L}) and '2d-b56' (M_{2K-2L,2L+1}).
    """
    eps = float(epsilon)
    if which == "second":
        psf = basis.bx.psf if isinstance(basis, Basis2D) else basis.psf
        if isinstance(psf, Psf2D):
            raise ValidationError("use the 2D QFIM for second moments in 2D")
        dk = delta_k(psf)
        return FisherReport((2,), [[4 * eps * dk**2]], "limit-formula", eps, mv.size)
    if which in ("even", "odd"):
        if not isinstance(basis, DerivativeBasis) or ell is None:
            raise ValidationError(f"'{which}' needs a 1D basis and ell")
        q = basis.q
        if which == "even":
            if ell < 1 or ell > basis.lmax:
                raise OrderTooHigh(f"ell={ell} outside 1..{basis.lmax}")
            v = eps * q[ell] ** 2 * (2 * ell) ** 2 * _M(mv, 2 * ell) ** (2 * ell - 2)
            return FisherReport((2 * ell,), [[v]], "limit-formula", eps, mv.size)
        if ell < 1 or ell + 1 > basis.lmax:
            raise OrderTooHigh(f"ell={ell} needs modes up to {ell + 1}")
        m_even = _M(mv, 2 * ell)
        if m_even == 0:
            raise ZeroEvenMoment(f"M_{2 * ell} = 0")
        v = (4 * eps * q[ell + 1] ** 2 * (2 * ell + 1) ** 2
             * _M(mv, 2 * ell + 1) ** (4 * ell) / m_even ** (2 * ell))
        return FisherReport((2 * ell + 1,), [[v]], "limit-formula", eps, mv.size)
    if not isinstance(basis, Basis2D) or K is None or L is None:
        raise ValidationError(f"'{which}' needs a 2D basis, K and L")
    q = basis.q2d
    if which == "2d-even":
        key = (2 * L, 2 * K - 2 * L)
        v = eps * q[L, K - L] ** 2 * (2 * K) ** 2 * _M(mv, key) ** (2 * K - 2)
    elif which == "2d-b12":
        if not 0 <= L <= K - 1:
            raise ValidationError("2d-b12 needs 0 <= L <= K-1")
        key = (2 * L + 1, 2 * K - 2 * L - 1)
        qa, qb = q[L, K - L] ** 2, q[L + 1, K - L - 1] ** 2
        sig = qa * _M(mv, (2 * L, 2 * K - 2 * L)) ** (2 * K) + qb * _M(mv, (2 * L + 2, 2 * K - 2 * L - 2)) ** (2 * K)
        Mo = _M(mv, key)
        den = sig**2 - 4 * qa * qb * Mo ** (4 * K)
        if den <= 0:
            raise ZeroEvenMoment("denominator of the odd-pair formula vanishes")
        v = 4 * eps * sig * qa * qb * (2 * K) ** 2 * Mo ** (4 * K - 2) / den
    elif which in ("2d-b34", "2d-b56"):
        if which == "2d-b34":
            key, low, qq = (2 * L + 1, 2 * K - 2 * L), (2 * L, 2 * K - 2 * L), q[L + 1, K - L]
        else:
            key, low, qq = (2 * K - 2 * L, 2 * L + 1), (2 * K - 2 * L, 2 * L), q[K - L, L + 1]
        m_even = _M(mv, low)
        if m_even == 0:
            raise ZeroEvenMoment(f"M_{low} = 0")
        v = 4 * eps * qq**2 * (2 * K + 1) ** 2 * _M(mv, key) ** (4 * K) / m_even ** (2 * K)
    else:
        raise ValidationError(f"unknown formula {which!r}")
    return FisherReport((key,), [[v]], "limit-formula", eps, mv.size)


def strong_limit_f22(povm: Povm, epsilon: float) -> FisherReport:
    """s -> 0 limit of F_22 from the O(s^2) strong series.

    Only outcomes with vanishing zeroth- and first-order terms contribute,
    each giving 4 C2 where C2 is the rad_2 coefficient.
    """
    ser = strong_series(povm, epsilon)
    Q0, Q1, C2 = ser.const, ser.terms[(1,)], ser.terms[(2,)]
    # P >= 0 forces Q0 > 0 wherever C2 < 0, so a tiny Q0 with negative C2
    # (the bucket holding the dressing tail) is not a null outcome
    null = (np.abs(Q0) < NULL_Q0) & (np.abs(Q1) < NULL_Q0) & (C2 >= 0)
    v = 4 * float(np.sum(C2[null]))
    return FisherReport((2,), [[v]], "limit-formula", float(epsilon), 0.0,
                        {"null_outcomes": [ser.labels[i] for i in np.flatnonzero(null)]})


# ==========================================================================
# quantum Fisher information of the second-moment block
# ==========================================================================

def sld_qfim(rho, drhos, tol: float = SLD_TOL) -> np.ndarray:
    """Re tr(rho L_a L_b) with SLDs solved in the eigenbasis of ``rho``.

    Pairs of eigenvalues summing below ``tol`` (relative to the trace) are
    outside the support and dropped.
    """
    w, V = np.linalg.eigh(rho)
    w = np.where(np.abs(w) < tol * max(np.abs(w).sum(), 1e-300), 0.0, w)
    D = [V.conj().T @ d @ V for d in drhos]
    den = w[:, None] + w[None, :]
    inv = np.zeros_like(den)
    ok = den > tol * max(w.sum(), 1e-300)
    inv[ok] = 1.0 / den[ok]
    n = len(drhos)
    J = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            J[a, b] = J[b, a] = 2 * float(np.sum((D[a] * D[b].T) * inv).real)
    return J


_I2 = np.eye(2)
_SX = np.array([[0.0, 1.0], [1.0, 0.0]])
_SZ = np.diag([1.0, -1.0])


def _rho2_basis(dkx, dky, r):
    """rho2 = cxx*Rxx + cxy*Rxy + cyy*Ryy for covariance entries c (the squared moments)."""
    t = math.sqrt(1 - r * r)
    Rxx = 0.5 * dkx**2 * (_I2 + r * _SZ + t * _SX)
    Ryy = 0.5 * dky**2 * (_I2 + r * _SZ - t * _SX)
    Rxy = dkx * dky * (r * _I2 + _SZ)
    return Rxx, Rxy, Ryy


def _psf_dk(psf):
    if isinstance(psf, Psf2D):
        return delta_k(psf)
    if len(psf) == 2:
        return float(psf[0]), float(psf[1]), 0.0
    dkx, dky, r = psf
    return float(dkx), float(dky), float(r)


def rho2_matrix(psf, cxx, cxy, cyy):
    Rxx, Rxy, Ryy = _rho2_basis(*_psf_dk(psf))
    return cxx * Rxx + cxy * Rxy + cyy * Ryy


def qfim_rho2(psf, X: float, Y: float, beta: float, epsilon: float) -> FisherReport:
    """QFIM over (X, Y, beta); the pure boundary |beta| = 1 returns the (X, Y) block.

    ``psf`` is a Psf2D or a tuple (dk_x, dk_y, r).
    """
    dkx, dky, r = _psf_dk(psf)
    if not abs(beta) <= 1:
        raise InvalidBeta(f"|beta| = {abs(beta):g} > 1")
    if dkx <= 0 or dky <= 0:
        raise ValidationError("dk_x and dk_y must be positive")
    eps = float(epsilon)
    Rxx, Rxy, Ryy = _rho2_basis(dkx, dky, r)
    rho = X * X * Rxx + beta * X * Y * Rxy + Y * Y * Ryy
    dX = 2 * X * Rxx + beta * Y * Rxy
    dY = 2 * Y * Ryy + beta * X * Rxy
    singular = abs(abs(beta) - 1) < 1e-12
    if singular:
        J = eps * sld_qfim(rho, [dX, dY])
        return FisherReport(("X", "Y"), J, "qfim", eps, None,
                            {"singular": True, "rho2": rho, "dk": (dkx, dky, r)})
    dB = X * Y * Rxy
    J = eps * sld_qfim(rho, [dX, dY, dB])
    return FisherReport(("X", "Y", "beta"), J, "qfim", eps, None,
                        {"singular": False, "rho2": rho, "dk": (dkx, dky, r)})


def qfim_xy_beta_closed(dkx, dky, X, Y, beta, epsilon):
    """Diagonal closed form for r = 0."""
    a2, b2 = dkx**2, dky**2
    jb = a2 * b2 * X**2 * Y**2 / ((a2 * X**2 + b2 * Y**2) * (1 - beta**2))
    return 4 * epsilon * np.diag([a2, b2, jb])


def optimal_beta_angle(X: float, Y: float, beta: float) -> float:
    return 0.5 * math.atan2(beta * (X * X - Y * Y), 2 * X * Y)


def _projector_pair(phi):
    u = np.array([math.cos(phi), -math.sin(phi)])
    v = np.array([math.sin(phi), math.cos(phi)])
    return np.outer(u, u), np.outer(v, v)


@dataclass(frozen=True, eq=False)
class AngleQfim:
    report: FisherReport
    theta_prime: float
    radii_pair: tuple       # projectors in (e1, e2) for (Lambda1, Lambda2)
    angle_pair: tuple       # projectors in (e1, e2) for theta


def qfim_angle(L1: float, L2: float, theta: float, dk, epsilon: float) -> AngleQfim:
    """QFIM over (Lambda1, Lambda2, theta) for an isotropic PSF with r = 0.

    ``dk`` is a scalar, a (dk_x, dk_y, r) tuple or a Psf2D.
    """
    if np.ndim(dk) == 0 and not isinstance(dk, Psf2D):
        dkx = dky = float(dk)
        r = 0.0
    else:
        dkx, dky, r = _psf_dk(dk)
    if not math.isclose(dkx, dky, rel_tol=1e-9):
        raise AnisotropicPsf(f"dk_x = {dkx:g} differs from dk_y = {dky:g}")
    if abs(r) > 1e-9:
        raise ValidationError("the angle parametrization assumes r = 0")
    eps = float(epsilon)
    Rxx, Rxy, Ryy = _rho2_basis(dkx, dky, 0.0)
    c, s = math.cos(theta), math.sin(theta)

    def rho_of(cxx, cxy, cyy):
        return cxx * Rxx + cxy * Rxy + cyy * Ryy

    rho = rho_of(L1**2 * c * c + L2**2 * s * s, (L1**2 - L2**2) * s * c, L1**2 * s * s + L2**2 * c * c)
    d1 = rho_of(2 * L1 * c * c, 2 * L1 * s * c, 2 * L1 * s * s)
    d2 = rho_of(2 * L2 * s * s, -2 * L2 * s * c, 2 * L2 * c * c)
    dth = rho_of(-(L1**2 - L2**2) * 2 * s * c, (L1**2 - L2**2) * (c * c - s * s), (L1**2 - L2**2) * 2 * s * c)
    J = eps * sld_qfim(rho, [d1, d2, dth])
    rep = FisherReport(("Lambda1", "Lambda2", "theta"), J, "qfim", eps)
    X = math.sqrt(L1**2 * c * c + L2**2 * s * s)
    Y = math.sqrt(L1**2 * s * s + L2**2 * c * c)
    beta = (L1**2 - L2**2) * s * c / (X * Y) if X * Y > 0 else 0.0
    return AngleQfim(rep, optimal_beta_angle(X, Y, beta),
                     _projector_pair(theta + math.pi / 4), _projector_pair(theta))


# ==========================================================================
# Cramer-Rao bounds
# ==========================================================================

@dataclass(frozen=True)
class CrbResult:
    params: tuple
    covariance: np.ndarray | None     # F^-1 / shots, None when singular
    per_param: np.ndarray             # 1 / (shots F_kk)
    coincide: bool
    note: str = ""

    def std(self) -> np.ndarray:
        src = self.per_param if self.covariance is None else np.diag(self.covariance)
        return np.sqrt(src)


def crb(report: FisherReport, shots: float = 1, strict: bool = False) -> CrbResult:
    """Matrix bound F^-1/N plus the per-parameter bounds 1/(N F_kk).

    A singular matrix downgrades to per-parameter bounds, or raises
    SingularFIM when ``strict``.
    """
    F = report.matrix * shots
    d = np.diag(F)
    with np.errstate(divide="ignore"):
        per = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), np.inf)
    w = np.linalg.eigvalsh(F)
    if w.min() <= 1e-12 * max(w.max(), 1e-300):
        if strict:
            raise SingularFIM(f"Fisher matrix over {report.params} is singular")
        return CrbResult(report.params, None, per, False, "singular Fisher matrix; per-parameter bounds only")
    cov = np.linalg.inv(F)
    cov = 0.5 * (cov + cov.T)
    coincide = bool(np.allclose(np.diag(cov), per, rtol=1e-9, atol=0))
    return CrbResult(report.params, cov, per, coincide)


# ==========================================================================
# higher-moment counterexample in the two-photon subspace
# ==========================================================================

@dataclass(frozen=True)
class CounterexampleResult:
    A44: float
    A42: float
    A22: float
    slope: float              # dA44 / dM8
    subspace_qfi: float
    diagonal_fi: float        # b4 projector alone, 1 / A44 form
    sld_check: float          # numeric SLD QFI of the 2x2 block
    other_fi: float           # the remaining photon-number outcomes of the b4 family
    ratio_subspace: float
    ratio_total: float
    improved: bool
    regime: str


def appf_coefficients(mv: MomentVector, epsilon: float, q, normalized: bool = True):
    """(A44, A42, A22) of the two-photon block spanned by psi^dag b4^dag|0> and b2^dag b2^dag|0>/sqrt2.

    With ``normalized`` the b2 pair amplitude carries the Fock normalization
    (prefactors q4 q2^2/sqrt2 and q2^4/2); otherwise q4 q2^2/4 and q2^4/16.
    """
    e = float(epsilon)
    m2, m4, m6, m8 = (float(mv.rad[k]) for k in (2, 4, 6, 8))
    g = e / (1 + e)
    E44 = g**2 * ((m8 - m4**2) + 2 / (1 + e) * m4**2)
    E42 = 2 * g**2 * ((m6 * m2 - m4 * m2**2) + m4 * m2**2 / (1 + e))
    E22 = 2 * e**2 / (1 + e) * m4**2 - 4 * e**3 / (1 + e) ** 2 * m4 * m2**2 + 2 * e**4 / (1 + e) ** 3 * m2**4
    q2, q4 = float(q[2]), float(q[4])
    c42, c22 = (q4 * q2**2 / math.sqrt(2), q2**4 / 2) if normalized else (q4 * q2**2 / 4, (q2**2 / 4) ** 2)
    return q4**2 * E44, c42 * E42, c22 * E22, (E44, E42, E22)


def appf_expectations_mc(scene: Scene, samples: int = 10**6, seed=0):
    """Monte Carlo of the three thermal expectations behind the A coefficients."""
    def functional(a):
        A0, A2, A4 = a[:, 0], a[:, 2], a[:, 4]
        e = np.exp(-np.abs(A0) ** 2)
        return np.stack([e * np.abs(A4) ** 2 * np.abs(A0) ** 2,
                         (e * A4 * A0 * np.conj(A2) ** 2).real,
                         e * np.abs(A2) ** 4], axis=1)

    return amplitude_monte_carlo(functional, scene, 4, samples, seed)


def _b4_family_fi(mv, epsilon, q4, skip_one: bool, kmax: int | None = None) -> float:
    """F_88 from outcomes psi^dag^k b4^dag|0>/sqrt(k!), k = 0, 1, ...

    Q_k = q4^2 g^(k+1) (m8 - g m4^2 + k m4^2/(1+eps)) with g = eps/(1+eps).
    """
    e = float(epsilon)
    g = e / (1 + e)
    m4, m8 = float(mv.rad[4]), float(mv.rad[8])
    M8 = mv.magnitude(8)
    if kmax is None:
        kmax = max(50, int(60 / max(-math.log(g), 1e-3)))
    total = 0.0
    for k in range(kmax + 1):
        if skip_one and k == 1:
            continue
        Q = q4**2 * g ** (k + 1) * (m8 - g * m4**2 + k * m4**2 / (1 + e))
        dQ = q4**2 * g ** (k + 1) * 8 * M8**7
        if Q > 0:
            total += dQ**2 / Q
    return total


def appf_counterexample(scene: Scene, basis: DerivativeBasis, epsilon: float | None = None,
                        normalized: bool = True) -> CounterexampleResult:
    """Compare the b4 projector with the best measurement on the two-photon block for M8."""
    eps = scene.epsilon if epsilon is None else float(epsilon)
    if scene.dimension != 1:
        raise ValidationError("the counterexample is 1D")
    if basis.lmax < 4:
        raise OrderTooHigh("the counterexample needs modes up to b4")
    if scene.size <= 0:
        raise DegenerateScene("scene has zero size")
    mv = moments(scene, 8)
    if mv.rad[8] <= 0:
        raise DegenerateScene("M8 vanishes")
    a, c, b, _ = appf_coefficients(mv, eps, basis.q, normalized)
    q4 = float(basis.q[4])
    p = q4**2 * (eps / (1 + eps)) ** 2 * 8 * mv.magnitude(8) ** 7
    diag = p * p / a
    det = a * b - c * c
    A = np.array([[a, c], [c, b]])
    sld = float(sld_qfim(A, [np.diag([p, 0.0])])[0, 0])
    if det > 0:
        sub = p * p * (det + b * b) / ((a + b) * det)
        regime = "improvement"
    else:
        sub = sld
        regime = "no-improvement"
    other = _b4_family_fi(mv, eps, q4, skip_one=True)
    ratio_sub = sub / diag
    ratio_tot = (other + sub) / (other + diag)
    return CounterexampleResult(a, c, b, p, sub, diag, sld, other, ratio_sub, ratio_tot,
                                bool(det > 0 and sub > diag), regime)


# ==========================================================================
# centroid pre-estimation
# ==========================================================================

@dataclass(frozen=True)
class CentroidSchemeResult:
    fi_centroid: float          # 4 eps dk^2
    split_fim: np.ndarray       # half the resources on each stage
    qfim: np.ndarray
    bound_trace: float          # lower bound on trace(F^-1) for single-basis schemes
    split_trace: float
    efficiency: float           # sqrt(bound_trace / split_trace)
    max_tail_ratio: float       # numeric sup over eps of the photon-number sum / eps
    mode: str


def _tail_ratio(eps: float) -> float:
    return (eps + math.floor(eps + 1) * (eps / (1 + eps)) ** math.floor(eps + 2)) / eps


def centroid_scheme(psf, epsilon: float, mode: str = "weak") -> CentroidSchemeResult:
    """FI for the centroid basis, the half-half split FIM and the efficiency bound."""
    if mode not in ("weak", "strong"):
        raise ValidationError("mode must be 'weak' or 'strong'")
    eps = float(epsilon)
    dk = delta_k(psf)
    if isinstance(psf, Psf2D):
        raise ValidationError("centroid_scheme is 1D")
    f = 4 * eps * dk**2
    split = np.diag([f / 2, f / 2])
    grid = np.concatenate([np.geomspace(1e-3, 1, 400), np.linspace(1, 50, 4901)])
    tail = max(_tail_ratio(x) for x in grid)
    bound_trace = (1 + math.e) / (4 * eps * dk**2)
    split_trace = float(np.trace(np.linalg.inv(split)))
    return CentroidSchemeResult(f, split, np.diag([f, f]), bound_trace, split_trace,
                                math.sqrt(bound_trace / split_trace), tail, mode)


def centroid_fi_numeric(basis: DerivativeBasis, scene: Scene, kmax: int = 4) -> FisherReport:
    """F_11 about the frame origin for the b0 +/- b1 basis via the weak series."""
    povm = centroid_povm(basis)
    ser = weak_series(povm, kmax, scene=scene)
    mv = moments(scene, kmax, origin=0.0)
    return fi_from_series(ser, [1], mv)
