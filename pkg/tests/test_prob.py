import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayleigh_moments import _kernels
from rayleigh_moments.basis import gram_schmidt_basis
from rayleigh_moments.errors import (
    CentroidFrameMismatch,
    OutsideConvergenceRadius,
    UnsupportedPattern,
    ValidationError,
)
from rayleigh_moments.povm import dressed_povm, interleaved_povm, spade_povm
from rayleigh_moments.prob import (
    mc_gaussian_oracle,
    strong_series,
    thermal_exact_probs,
    weak_exact_probs,
    weak_series,
    wick_expectation,
    wick_monte_carlo,
)
from rayleigh_moments.psf import gaussian
from rayleigh_moments.scene import Scene, moments

_BASIS = gram_schmidt_basis(gaussian(1.0), 8)


@pytest.fixture(scope="module")
def spade(basis8):
    return spade_povm(basis8)


def centred(xs, w, eps):
    sc = Scene.from_weights(xs, w, eps)
    return sc.translated(-sc.centroid)


def test_weak_coefficients_are_mode_overlaps(spade, basis8):
    eps = 0.01
    s = weak_series(spade, 8, eps)
    b1 = spade.index("b1")
    # P(b1) = eps q1^2 M2 + ..., P(b0) loses the same amount
    assert s.terms[(2,)][b1] == pytest.approx(eps * basis8.q[1] ** 2, rel=1e-10)
    assert s.terms[(2,)][spade.index("b0")] == pytest.approx(-eps * basis8.q[1] ** 2, rel=1e-10)
    assert s.p_k(2)[b1] == pytest.approx(2 * basis8.q[1] ** 2, rel=1e-10)
    # odd orders vanish for an even PSF and a parity-respecting POVM
    assert (3,) not in s.terms and (1,) not in s.terms


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-0.15, 0.15), min_size=2, max_size=5), st.floats(1e-4, 0.1))
def test_weak_series_within_remainder_bound(xs, eps):
    if np.ptp(xs) < 1e-4:
        return
    sc = centred(xs, np.linspace(1, 2, len(xs)), eps)
    povm = spade_povm(_BASIS)
    s = weak_series(povm, 8, scene=sc)
    mv = moments(sc, 8)
    err = np.max(np.abs(weak_exact_probs(sc, povm).values - s.evaluate(mv)))
    assert err <= s.remainder_bound(mv) + 1e-12 * eps


def test_interleaved_odd_series_and_exact(basis10):
    povm = interleaved_povm(basis10, "odd")
    sc = centred([-0.05, 0.01, 0.04], [1, 2, 1], 0.01)
    s = weak_series(povm, 10, scene=sc)
    mv = moments(sc, 10)
    assert (3,) in s.terms
    err = np.max(np.abs(weak_exact_probs(sc, povm).values - s.evaluate(mv)))
    assert err <= s.remainder_bound(mv) + 1e-14


def test_frame_and_radius_checks(spade):
    off = Scene.from_weights([0.1, 0.3], [1, 1], 0.1)
    with pytest.raises(CentroidFrameMismatch):
        weak_exact_probs(off, spade)
    assert weak_exact_probs(off, spade, require_centroid=False).values.sum() == pytest.approx(1.0)
    with pytest.raises(OutsideConvergenceRadius):
        weak_series(spade, 8, scene=centred([-1.5, 1.5], [1, 1], 0.1))
    with pytest.raises(ValidationError):
        weak_series(spade, 8)


def test_thermal_tends_to_weak(spade):
    sc = centred([-0.3, 0.1, 0.4], [1, 1, 1], 1.0)
    gaps = []
    for eps in (1e-2, 1e-3):
        t = thermal_exact_probs(sc.with_epsilon(eps), spade).values
        w = weak_exact_probs(sc.with_epsilon(eps), spade).values
        gaps.append(np.max(np.abs(t - w)))
    assert gaps[0] / gaps[1] == pytest.approx(100, rel=0.05)


def test_strong_series_sums_and_weak_limit(spade):
    eps = 0.5
    s = strong_series(dressed_povm(spade, "summed"), eps)
    assert s.const.sum() == pytest.approx(1.0, abs=1e-13)
    for c in s.terms.values():
        assert abs(c.sum()) < 1e-12
    # one photon or fewer: vacuum 1/(1+eps)
    assert s.const[0] == pytest.approx(1 / (1 + eps))


def test_strong_series_per_count_matches_thermal(spade):
    eps = 0.8
    d = dressed_povm(spade, "per-count", eps)
    sc = centred([-0.01, 0.004, 0.012], [1, 2, 1], eps).translated(0.003)
    s = strong_series(d, eps)
    err = np.max(np.abs(thermal_exact_probs(sc, d).values - s.evaluate(moments(sc, 2, origin=0.0))))
    assert err < 1e-7


def test_mc_oracle_is_deterministic_and_unbiased(spade):
    sc = centred([-0.3, 0.1, 0.4], [1, 1, 1], 0.5)
    d = dressed_povm(spade, "summed")
    a = mc_gaussian_oracle(sc, d, 10**5, seed=3)
    b = mc_gaussian_oracle(sc, d, 10**5, seed=3)
    np.testing.assert_array_equal(a.values, b.values)
    exact = thermal_exact_probs(sc, d).values
    ok = a.se > 0
    assert np.all(np.abs(a.values[ok] - exact[ok]) <= 5 * a.se[ok])
    with pytest.raises(ValidationError):
        mc_gaussian_oracle(sc, d, 100)


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")
def test_numba_kernels_match_numpy():
    rng = np.random.default_rng(0)
    n, J, M = 500, 3, 6
    alpha = (rng.normal(size=(n, J)) + 1j * rng.normal(size=(n, J))) * 0.3
    A = rng.normal(size=(J, J)) + 1j * rng.normal(size=(J, J))
    gram = A @ A.conj().T / J + np.eye(J)
    g0 = rng.normal(size=J) + 0j
    B = rng.normal(size=(M, J, J)) + 1j * rng.normal(size=(M, J, J))
    mats = np.einsum("mij,mkj->mik", B, B.conj()) / J
    kinds = np.array([_kernels.VACUUM, _kernels.PLAIN, _kernels.DRESSED_SUM, _kernels.DRESSED_K,
                      _kernels.FUND_K, _kernels.BUCKET], dtype=np.int64)
    counts = np.array([-1, -1, -1, 2, 1, -1], dtype=np.int64)
    np.testing.assert_allclose(_kernels.quad_forms_numba(alpha, mats), _kernels.quad_forms_numpy(alpha, mats),
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(_kernels.mc_functionals_numba(alpha, gram, g0, mats, kinds, counts),
                               _kernels.mc_functionals_numpy(alpha, gram, g0, mats, kinds, counts),
                               rtol=1e-12, atol=1e-14)


def test_pure_numpy_flag_selects_fallback():
    code = "from rayleigh_moments import _kernels as k; print(k.HAVE_NUMBA, k.mc_functionals is k.mc_functionals_numpy)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                         env={**os.environ, "RAYLEIGH_MOMENTS_PURE_NUMPY": "1"})
    assert out.stdout.split() == ["False", "True"]


def test_wick_closed_forms():
    sc = Scene.from_weights([-0.3, 0.1, 0.4], [0.3, 0.4, 0.3], 1.0)
    mv = moments(sc, 8)
    # pure pattern is the thermal photon-number law k! eps^k/(1+eps)^(k+1)
    assert wick_expectation("pure", 3, 1.0, mv) == pytest.approx(math.factorial(3) / 2**4)
    assert wick_expectation("lin1", 2, 1.0, mv) == 0.0
    mean, se = wick_monte_carlo("one", 3, sc, 2 * 10**5, seed=5, ell=2)
    assert abs(mean - wick_expectation("one", 3, 1.0, mv, ell=2)) < 5 * se
    with pytest.raises(UnsupportedPattern):
        wick_expectation("three", 2, 1.0, mv)
    with pytest.raises(UnsupportedPattern):
        wick_expectation("two1", 1, 1.0, mv)
