"""Photon-count sampling, moment estimation and variance studies."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .basis import DerivativeBasis, gram_schmidt_basis
from .errors import (InvalidDistribution, LowCountsWarning, NegativeRadicand, NonIdentifiable,
                     SingularFIM, ValidationError)
from .fisher import crb, fi_from_series
from .povm import centroid_povm, spade_povm
from .prob import Probabilities, ProbSeries, weak_exact_probs, weak_series
from .scene import MomentVector, Scene, moments

MIN_COUNTS = 20
GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True, eq=False)
class CountRecord:
    labels: tuple
    counts: np.ndarray
    N: int
    seed: object
    povm_label: str = ""

    def __post_init__(self):
        c = np.asarray(self.counts)
        if np.any(c < 0) or int(c.sum()) != self.N:
            raise ValidationError("counts must be non-negative and sum to N")

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.N


def _rng(seed, index=None):
    if index is None:
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(index),)))


def validate_distribution(p, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise InvalidDistribution("probabilities must be a finite 1D array")
    if p.min() < -tol:
        raise InvalidDistribution(f"negative probability {p.min():.3e}")
    if abs(p.sum() - 1) > tol:
        raise InvalidDistribution(f"probabilities sum to {p.sum():.12g}")
    p = np.clip(p, 0, None)
    return p / p.sum()


def sample_outcomes(probs, N: int, seed=0, labels=None, povm_label: str = "", rng=None) -> CountRecord:
    """Multinomial draw of N shots; deterministic for a fixed seed."""
    if isinstance(probs, Probabilities):
        labels = probs.labels if labels is None else labels
        probs = probs.values
    p = validate_distribution(probs)
    labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(p.size))
    N = int(N)
    if N < 0:
        raise ValidationError("N must be non-negative")
    gen = _rng(seed) if rng is None else rng
    counts = gen.multinomial(N, p)
    return CountRecord(labels, counts, N, seed, povm_label)


# ==========================================================================
# estimation
# ==========================================================================

@dataclass(frozen=True)
class MomentEstimate:
    params: tuple
    radicand: np.ndarray      # signed estimates of the moment radicands
    magnitude: np.ndarray     # M_k = |rad_k|^(1/k)
    se: np.ndarray            # plug-in standard errors of M_k from the CRB
    method: str
    loglik: float

    def value(self, key) -> float:
        return float(self.magnitude[self.params.index(key)])


def _order(key) -> int:
    return key if np.ndim(key) == 0 else int(sum(key))


def _with_rads(at: MomentVector, params, rads) -> MomentVector:
    rad = np.array(at.rad, dtype=float)
    for k, v in zip(params, rads):
        rad[k] = v
    rad.setflags(write=False)
    return replace(at, rad=rad)


def _loglik(counts, P) -> float:
    m = counts > 0
    if np.any(P[m] <= 0):
        return -math.inf
    return float(np.sum(counts[m] * np.log(P[m])))


def _linear_columns(model: ProbSeries, params):
    cols = []
    for p in params:
        col = np.zeros_like(model.const)
        for mono, c in model.terms.items():
            n = mono.count(p)
            if n > 1 or (n == 1 and len(mono) > 1):
                raise ValidationError("moment inversion needs a model linear in the requested radicands")
            if n == 1:
                col = col + c
        cols.append(col)
    return np.array(cols)


def _invert(record: CountRecord, model: ProbSeries, params, at: MomentVector) -> np.ndarray:
    """Weighted least squares for the radicands in the linear series."""
    A = _linear_columns(model, params)          # (n_params, n_outcomes)
    base = model.evaluate(_with_rads(at, params, np.zeros(len(params))))
    f = record.frequencies
    use = np.any(A != 0, axis=0)
    P0 = model.evaluate(at)
    w = 1.0 / np.maximum(np.where(use, np.maximum(P0, f), 1.0), 1e-300)
    Aw = A[:, use] * np.sqrt(w[use])
    y = (f - base)[use] * np.sqrt(w[use])
    sol, *_ = np.linalg.lstsq(Aw.T, y, rcond=None)
    return sol


def _golden(fun, lo, hi, tol):
    """Maximize ``fun`` on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while abs(b - a) > tol * max(abs(a), abs(b), 1e-300):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def _plugin_se(model, params, at, N):
    try:
        rep = fi_from_series(model, params, at)
        return crb(rep, N, strict=True).std()
    except (SingularFIM, ValidationError, ArithmeticError):
        return np.full(len(params), np.nan)


def estimate_moments(record: CountRecord, model: ProbSeries, params, at: MomentVector,
                     method: str = "moment-inversion", sweeps: int = 3, tol: float = 1e-10) -> MomentEstimate:
    """Estimate the radicands of ``params`` with the other moments held at ``at``.

    'moment-inversion' solves the series (linear in each radicand) by
    weighted least squares. 'max-likelihood' refines that start by
    coordinate-wise golden-section search on the multinomial likelihood.
    """
    params = tuple(p if np.ndim(p) == 0 else tuple(p) for p in params)
    if tuple(model.labels) != tuple(record.labels):
        raise ValidationError("record and model outcomes differ")
    keys = model.keys()
    for p in params:
        if p not in keys:
            raise NonIdentifiable(f"moment {p} does not enter the model")
    if method not in ("moment-inversion", "max-likelihood"):
        raise ValidationError(f"unknown method {method!r}")
    counts = np.asarray(record.counts)
    rads = _invert(record, model, params, at)

    def ll(r):
        return _loglik(counts, model.evaluate(_with_rads(at, params, r)))

    best = ll(rads)
    if method == "max-likelihood":
        se0 = _plugin_se(model, params, _with_rads(at, params, rads), record.N)
        for _ in range(sweeps):
            for i, p in enumerate(params):
                k = _order(p)
                M = abs(rads[i]) ** (1 / k)
                # radicand half-width from the magnitude SE (or 50% of the start)
                dM = se0[i] if np.isfinite(se0[i]) and se0[i] > 0 else 0.5 * M
                half = max(abs((M + 6 * dM) ** k - rads[i]), abs(rads[i]) * 1e-6, 1e-300)
                lo, hi = rads[i] - half, rads[i] + half
                if k % 2 == 0:
                    lo = max(lo, 0.0)

                def f1(x, i=i):
                    r = rads.copy()
                    r[i] = x
                    return ll(r)

                x, fx = _golden(f1, lo, hi, tol)
                if fx > best:
                    rads[i], best = x, fx
    for p, r in zip(params, rads):
        if _order(p) % 2 == 0 and r < 0:
            raise NegativeRadicand(p, abs(r) ** (1 / _order(p)))
    est_at = _with_rads(at, params, rads)
    P = model.evaluate(est_at)
    G = np.array([model.gradient(est_at, p) for p in params])
    informative = np.any(G != 0, axis=0)
    if np.any(record.N * P[informative] < MIN_COUNTS):
        warnings.warn("an informative outcome has expected count below 20", LowCountsWarning, stacklevel=2)
    mags = np.array([abs(r) ** (1 / _order(p)) for p, r in zip(params, rads)])
    se = _plugin_se(model, params, est_at, record.N)
    return MomentEstimate(params, rads, mags, se, method, best)


# ==========================================================================
# replication studies
# ==========================================================================

@dataclass(frozen=True)
class VarianceStudy:
    estimates: np.ndarray        # (reps, n_params) magnitudes
    mean: np.ndarray
    var: np.ndarray
    crb: np.ndarray
    ratio: np.ndarray
    failures: int


def replicate_estimates(probs, model: ProbSeries, params, at: MomentVector, N: int, reps: int = 200,
                        seed=0, method: str = "moment-inversion", crb_var=None) -> VarianceStudy:
    """Draw ``reps`` independent records and estimate each.

    Replication i uses the stream SeedSequence(seed, spawn_key=(i,)), so the
    result does not depend on execution order. ``crb_var`` defaults to the
    series CRB at the true moments.
    """
    params = tuple(params)
    vals = []
    failures = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LowCountsWarning)
        for i in range(reps):
            rec = sample_outcomes(probs, N, seed, labels=model.labels, rng=_rng(seed, i))
            try:
                vals.append(estimate_moments(rec, model, params, at, method).magnitude)
            except NegativeRadicand:
                failures += 1
    est = np.array(vals)
    if crb_var is None:
        crb_var = np.diag(crb(fi_from_series(model, params, at), N).covariance)
    crb_var = np.atleast_1d(np.asarray(crb_var, dtype=float))
    var = est.var(axis=0, ddof=1)
    return VarianceStudy(est, est.mean(axis=0), var, crb_var, var / crb_var, failures)


# ==========================================================================
# two-stage centroid scheme
# ==========================================================================

@dataclass(frozen=True)
class TwoStageResult:
    xbar: float
    m2: float
    var_xbar: float     # plug-in CRB variances for the shots each stage received
    var_m2: float
    n1: int
    n2: int


def centroid_two_stage(scene: Scene, psf, N: int, split: float = 0.5, seed=0,
                       basis: DerivativeBasis | None = None, reference: float = 0.0,
                       kmax: int = 4, rng=None) -> TwoStageResult:
    """Locate the centroid with the b0 +/- b1 basis, then estimate M2 with SPADE about it.

    ``split`` is the fraction of shots used by stage 1; split = 0 skips it
    and trusts ``reference`` as the centroid. Only scene positions enter the
    sampling; estimation assumes nothing beyond the series model.
    """
    if not 0 <= split <= 1:
        raise ValidationError("split must lie in [0, 1]")
    if scene.dimension != 1:
        raise ValidationError("the two-stage scheme is 1D")
    gen = _rng(seed) if rng is None else rng
    basis = basis or gram_schmidt_basis(psf, max(kmax, 2))
    eps = scene.epsilon
    n1 = int(round(split * N))
    n2 = int(N) - n1
    blank = np.zeros(kmax + 1)
    blank[0] = 1.0
    blank.setflags(write=False)
    xhat, var1 = float(reference), 0.0
    if n1 > 0:
        cp = centroid_povm(basis)
        model = weak_series(cp, kmax, eps)
        probs = weak_exact_probs(scene.translated(-reference), cp, require_centroid=False)
        rec = sample_outcomes(probs, n1, seed, rng=gen)
        at = MomentVector(reference, reference, blank, scene.size, scene.size)
        est = estimate_moments(rec, model, [1], at)
        xhat = reference + float(est.radicand[0])
        var1 = float(est.se[0] ** 2)
    elif split > 0:
        var1 = math.inf
    if n2 == 0:
        return TwoStageResult(xhat, math.nan, var1, math.inf, n1, 0)
    sp = spade_povm(basis)
    model = weak_series(sp, kmax, eps)
    probs = weak_exact_probs(scene.translated(-xhat), sp, require_centroid=False)
    rec = sample_outcomes(probs, n2, seed, rng=gen)
    at = MomentVector(xhat, xhat, blank, scene.size, scene.size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LowCountsWarning)
        est = estimate_moments(rec, model, [2], at)
    return TwoStageResult(xhat, float(est.magnitude[0]), var1, float(est.se[0] ** 2), n1, n2)
