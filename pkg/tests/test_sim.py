import math
import warnings

import numpy as np
import pytest

from rayleigh_moments.errors import (
    InvalidDistribution,
    LowCountsWarning,
    NegativeRadicand,
    NonIdentifiable,
    ValidationError,
)
from rayleigh_moments.fisher import crb, fi_from_series
from rayleigh_moments.povm import spade_povm
from rayleigh_moments.prob import weak_exact_probs, weak_series
from rayleigh_moments.scene import Scene, moments
from rayleigh_moments.sim import (
    CountRecord,
    _rng,
    centroid_two_stage,
    estimate_moments,
    replicate_estimates,
    sample_outcomes,
    validate_distribution,
)

EPS = 0.01
SCENE = Scene.from_weights([-0.05, 0.05], [0.5, 0.5], EPS)


@pytest.fixture(scope="module")
def setup(basis8):
    sp = spade_povm(basis8)
    return sp, weak_series(sp, 8, EPS), weak_exact_probs(SCENE, sp), moments(SCENE, 8)


def test_sampling_is_deterministic():
    p = [0.2, 0.3, 0.5]
    a = sample_outcomes(p, 1000, seed=4)
    b = sample_outcomes(p, 1000, seed=4)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.counts.sum() == 1000 and a.labels == ("0", "1", "2")
    assert sample_outcomes(p, 0).counts.sum() == 0
    np.testing.assert_allclose(a.frequencies.sum(), 1.0)


def test_distribution_checks():
    with pytest.raises(InvalidDistribution):
        validate_distribution([0.5, 0.6])
    with pytest.raises(InvalidDistribution):
        validate_distribution([1.1, -0.1])
    with pytest.raises(InvalidDistribution):
        validate_distribution([[0.5, 0.5]])
    # roundoff-level negatives are clipped
    assert validate_distribution([1.0, -1e-15, 1e-15]).min() >= 0
    with pytest.raises(ValidationError):
        CountRecord(("a", "b"), np.array([3, 4]), 8, 0)


def test_inversion_recovers_expected_counts(setup):
    sp, model, probs, mv = setup
    N = 10**14
    counts = np.floor(model.evaluate(mv) * N).astype(np.int64)
    counts[0] += N - counts.sum()
    rec = CountRecord(probs.labels, counts, N, None)
    est = estimate_moments(rec, model, [2], mv)
    assert est.value(2) == pytest.approx(mv.magnitude(2), rel=1e-6)
    ml = estimate_moments(rec, model, [2], mv, method="max-likelihood")
    assert ml.loglik >= est.loglik
    assert ml.value(2) == pytest.approx(mv.magnitude(2), rel=1e-6)


def test_single_record_within_standard_errors(setup):
    sp, model, probs, mv = setup
    rec = sample_outcomes(probs, 10**9, seed=11)
    est = estimate_moments(rec, model, [2], mv)
    expected_se = crb(fi_from_series(model, [2], mv), 10**9).std()[0]
    assert est.se[0] == pytest.approx(expected_se, rel=0.05)
    assert abs(est.value(2) - mv.magnitude(2)) < 5 * est.se[0]


def test_estimation_errors(setup):
    sp, model, probs, mv = setup
    rec = sample_outcomes(probs, 10**6, seed=0)
    with pytest.raises(NonIdentifiable):
        estimate_moments(rec, model, [3], mv)
    with pytest.raises(ValidationError):
        estimate_moments(rec, model, [2], mv, method="bayes")
    other = CountRecord(tuple("abc"), np.array([1, 0, 0]), 1, None)
    with pytest.raises(ValidationError):
        estimate_moments(other, model, [2], mv)


def test_negative_radicand_and_low_counts(setup):
    sp, model, probs, mv = setup
    counts = np.zeros(len(probs.labels), dtype=np.int64)
    # twice the expected b0 rate and no b1 clicks pushes M2^2 below zero
    counts[0], counts[1] = 980, 20
    rec = CountRecord(probs.labels, counts, 1000, None)
    with pytest.raises(NegativeRadicand) as info:
        estimate_moments(rec, model, [2], mv)
    assert info.value.k == 2 and info.value.magnitude > 0
    with pytest.warns(LowCountsWarning):
        estimate_moments(sample_outcomes(probs, 10**5, seed=2), model, [2], mv)


def test_replications_use_indexed_streams(setup):
    sp, model, probs, mv = setup
    st = replicate_estimates(probs, model, [2], mv, 10**7, reps=5, seed=9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LowCountsWarning)
        third = estimate_moments(sample_outcomes(probs, 10**7, rng=_rng(9, 2), labels=model.labels),
                                 model, [2], mv)
    assert st.estimates[2, 0] == third.value(2)
    again = replicate_estimates(probs, model, [2], mv, 10**7, reps=5, seed=9)
    np.testing.assert_array_equal(st.estimates, again.estimates)
    assert st.crb[0] == pytest.approx(1 / (10**7 * fi_from_series(model, [2], mv).matrix[0, 0]))


def test_two_stage_splits(psf, basis8):
    sc = SCENE.translated(0.002)
    r = centroid_two_stage(sc, psf, 10**7, 0.5, seed=0, basis=basis8)
    assert r.n1 + r.n2 == 10**7
    assert abs(r.xbar - 0.002) < 6 * math.sqrt(r.var_xbar)
    assert abs(r.m2 - 0.05) < 6 * math.sqrt(r.var_m2)
    skip = centroid_two_stage(sc, psf, 10**6, 0.0, seed=0, basis=basis8, reference=0.001)
    assert skip.xbar == 0.001 and skip.n1 == 0
    only = centroid_two_stage(sc, psf, 10**6, 1.0, seed=0, basis=basis8)
    assert only.n2 == 0 and math.isinf(only.var_m2)
    with pytest.raises(ValidationError):
        centroid_two_stage(sc, psf, 10**6, 1.5)
