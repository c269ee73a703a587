import math

import numpy as np
import pytest

from rayleigh_moments.basis import gram_schmidt_basis, separable_basis_2d
from rayleigh_moments.errors import (
    AnisotropicPsf,
    DegenerateScene,
    InvalidBeta,
    NumericalError,
    OrderTooHigh,
    SingularFIM,
    SingularProbability,
    ValidationError,
    ZeroEvenMoment,
)
from rayleigh_moments.fisher import (
    FisherReport,
    appf_coefficients,
    appf_counterexample,
    centroid_scheme,
    crb,
    fi_from_series,
    fi_limit_formulas,
    fisher_information,
    optimal_beta_angle,
    qfim_angle,
    qfim_rho2,
    sld_qfim,
    strong_limit_f22,
)
from rayleigh_moments.povm import dressed_povm, sliver_povm, spade_povm, table2d_povm
from rayleigh_moments.prob import strong_series, weak_series
from rayleigh_moments.psf import Psf2D, gaussian
from rayleigh_moments.scene import Scene, moments


def test_report_validation():
    with pytest.raises(ValidationError):
        FisherReport((2,), np.eye(2), "series", 0.1)
    with pytest.raises(NumericalError):
        FisherReport((2, 4), [[1.0, 0.5], [0.4, 1.0]], "series", 0.1)
    with pytest.raises(NumericalError):
        FisherReport((2, 4), [[1.0, 2.0], [2.0, 1.0]], "series", 0.1)
    with pytest.raises(NumericalError):
        FisherReport((2,), [[np.nan]], "series", 0.1)
    r = FisherReport((2, 4), [[2.0, 0.5], [0.5, 1.0]], "series", 0.1)
    assert r.entry(2, 4) == 0.5 and r.entry(4) == 1.0
    assert r.as_dict()["params"] == ["2", "4"]
    with pytest.raises(ValueError):
        r.matrix[0, 0] = 3


def test_fisher_information_rules():
    P = np.array([0.5, 0.5, 0.0])
    g = np.array([[1.0, -1.0, 0.0]])
    assert fisher_information(P, g)[0, 0] == pytest.approx(4.0)
    with pytest.raises(SingularProbability):
        fisher_information(P, np.array([[1.0, -2.0, 1.0]]), ["a", "b", "c"])


def test_series_order_checks(basis8):
    s = weak_series(spade_povm(basis8), 6, 0.01)
    mv = moments(Scene.from_weights([-0.01, 0.01], [1, 1], 0.01), 8)
    with pytest.raises(OrderTooHigh):
        fi_from_series(s, [6], mv)
    strong = strong_series(dressed_povm(spade_povm(basis8)), 1.0)
    with pytest.raises(OrderTooHigh):
        fi_from_series(strong, [3], moments(Scene.from_weights([-0.01, 0.01], [1, 1], 1.0), 4, origin=0.0))


def test_formula_errors(basis8):
    sym = moments(Scene.from_weights([-0.01, 0.01], [1, 1], 0.01), 8)
    with pytest.raises(OrderTooHigh):
        fi_limit_formulas(basis8, sym, 0.01, "odd", ell=8)
    with pytest.raises(ValidationError):
        fi_limit_formulas(basis8, sym, 0.01, "even")
    with pytest.raises(ValidationError):
        fi_limit_formulas(basis8, sym, 0.01, "quartic", ell=1)
    point = moments(Scene.from_weights([0.0, 0.0], [1, 1], 0.01), 8)
    with pytest.raises(ZeroEvenMoment):
        fi_limit_formulas(basis8, point, 0.01, "odd", ell=1)


@pytest.mark.parametrize("family,which,K,L", [
    ("b0w", "2d-even", 2, 1), ("b0w", "2d-even", 2, 0), ("b1w", "2d-b12", 2, 0), ("b2w", "2d-b12", 2, 1),
    ("b3w", "2d-b34", 1, 0), ("b4w", "2d-b34", 1, 1), ("b5w", "2d-b56", 1, 0), ("b6w", "2d-b56", 1, 1)])
def test_2d_formulas_match_series(family, which, K, L):
    p2 = Psf2D.gaussian(1.0)
    B2 = separable_basis_2d(gram_schmidt_basis(p2.fx, 7), gram_schmidt_basis(p2.fy, 7))
    rng = np.random.default_rng(1)
    sc = Scene.from_weights(rng.normal(size=(4, 2)) * 0.01, [1, 2, 1.5, 1], 0.01)
    mv = moments(sc.translated(-sc.centroid), 8)
    ref = fi_limit_formulas(B2, mv, 0.01, which, K=K, L=L)
    num = fi_from_series(weak_series(table2d_povm(B2, family), 8, 0.01), list(ref.params), mv)
    assert num.matrix[0, 0] == pytest.approx(ref.matrix[0, 0], rel=1e-3)


def test_strong_f22_sliver_and_bounded_by_qfi(psf):
    for eps in (0.1, 3.0):
        f = strong_limit_f22(dressed_povm(sliver_povm(psf)), eps).matrix[0, 0]
        assert f == pytest.approx(4 * eps * 0.25, rel=1e-6)


def test_sld_qfim_pure_qubit():
    # |psi(t)> = cos t |0> + sin t |1> has QFI 4
    t = 0.3
    v = np.array([math.cos(t), math.sin(t)])
    dv = np.array([-math.sin(t), math.cos(t)])
    rho = np.outer(v, v)
    drho = np.outer(dv, v) + np.outer(v, dv)
    assert sld_qfim(rho, [drho])[0, 0] == pytest.approx(4.0)


def test_qfim_beta_boundaries():
    with pytest.raises(InvalidBeta):
        qfim_rho2((0.5, 0.5, 0.0), 0.2, 0.1, 1.01, 0.1)
    r = qfim_rho2((0.5, 0.7, 0.0), 0.2, 0.1, 1.0, 0.1)
    assert r.params == ("X", "Y") and r.meta["singular"]
    # |beta| = 1 collapses rho2 to rank one along the fixed direction
    assert np.linalg.matrix_rank(r.meta["rho2"], tol=1e-12) == 1


def test_optimal_beta_angle_limits():
    assert optimal_beta_angle(0.2, 0.2, 0.5) == pytest.approx(0.0)
    assert optimal_beta_angle(0.3, 0.1, 0.0) == pytest.approx(0.0)
    assert abs(optimal_beta_angle(0.3, 0.1, 0.8)) > 0


def test_angle_qfim_checks():
    with pytest.raises(AnisotropicPsf):
        qfim_angle(0.3, 0.1, 0.2, (0.5, 0.6), 0.1)
    a = qfim_angle(0.3, 0.1, 0.4, 0.5, 0.1)
    for pair in (a.radii_pair, a.angle_pair):
        np.testing.assert_allclose(pair[0] + pair[1], np.eye(2), atol=1e-14)
    assert np.trace(a.radii_pair[0] @ a.angle_pair[0]) == pytest.approx(0.5)


def test_crb():
    r = FisherReport((2, 4), [[4.0, 0.0], [0.0, 1.0]], "series", 0.1)
    c = crb(r, shots=100)
    np.testing.assert_allclose(c.covariance, np.diag([1 / 400, 1 / 100]))
    assert c.coincide
    np.testing.assert_allclose(c.std(), [0.05, 0.1])
    corr = crb(FisherReport((2, 4), [[4.0, 1.0], [1.0, 1.0]], "series", 0.1))
    assert not corr.coincide and corr.covariance[0, 0] > corr.per_param[0]
    sing = FisherReport((2, 4), [[1.0, 1.0], [1.0, 1.0]], "series", 0.1)
    assert crb(sing).covariance is None
    with pytest.raises(SingularFIM):
        crb(sing, strict=True)


def test_counterexample_structure(basis8):
    sc = Scene.from_weights([-0.3, -0.1, 0.1, 0.3], [0.25] * 4, 1.0)
    res = appf_counterexample(sc, basis8)
    assert res.improved and res.ratio_subspace > res.ratio_total > 1
    assert res.sld_check == pytest.approx(res.subspace_qfi, rel=1e-8)
    a, c, b, _ = appf_coefficients(moments(sc, 8), 1.0, basis8.q)
    assert a * b - c**2 > 0
    # the gain fades in the weak limit
    weak = appf_counterexample(sc.with_epsilon(1e-3), basis8)
    assert weak.ratio_total - 1 < 1e-2 * (res.ratio_total - 1)
    with pytest.raises(DegenerateScene):
        appf_counterexample(Scene([0.0], [1.0], 1.0), basis8)


def test_centroid_scheme_constants(psf):
    res = centroid_scheme(psf, 0.01)
    assert res.fi_centroid == pytest.approx(0.01)
    np.testing.assert_allclose(res.split_fim, np.diag([0.005, 0.005]))
    assert res.efficiency == pytest.approx(math.sqrt((1 + math.e) / 4), rel=1e-12)
    assert res.max_tail_ratio <= 1 + 1 / math.e
    with pytest.raises(ValidationError):
        centroid_scheme(psf, 0.01, mode="medium")
