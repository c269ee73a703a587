import math

import numpy as np
import pytest

from rayleigh_moments.errors import (
    GridMismatch,
    NotDifferentiable,
    OrderTooHigh,
    PsfAssumptionViolated,
    ValidationError,
)
from rayleigh_moments.psf import (
    Grid,
    Psf2D,
    check_prop_1d,
    convergence_radius_lower_bound,
    default_grid,
    delta_k,
    gaussian,
    inner_product,
    load_sampled,
    sampled,
    sinc,
)


def norm2(psf, order=0):
    d = psf.derivative(order)
    return inner_product(d, d, psf.grid).real


@pytest.mark.parametrize("make", [gaussian, sinc])
def test_normalized(make):
    assert norm2(make(1.0)) == pytest.approx(1.0, abs=1e-10)


def test_gaussian_derivative_matches_finite_difference(psf):
    x = np.linspace(-3, 3, 13)
    h = 1e-4
    for n in range(1, 5):
        fd = (psf.derivative(n - 1, points=x + h) - psf.derivative(n - 1, points=x - h)) / (2 * h)
        np.testing.assert_allclose(psf.derivative(n, points=x), fd, atol=1e-6)


def test_xbar_derivative_flips_odd_orders(psf):
    np.testing.assert_array_equal(psf.xbar_derivative(3), -psf.derivative(3))
    np.testing.assert_array_equal(psf.xbar_derivative(2), psf.derivative(2))


def test_sinc_derivative_against_finite_difference():
    p = sinc(1.0)
    x = np.array([-2.3, -0.7, 0.0, 0.4, 1.9])
    h = 1e-5
    fd = (p.derivative(0, points=x + h) - p.derivative(0, points=x - h)) / (2 * h)
    np.testing.assert_allclose(p.derivative(1, points=x), fd, atol=1e-7)


def test_delta_k_and_radius_scale_with_sigma():
    for sigma in (1.0, 2.0):
        g = gaussian(sigma)
        assert delta_k(g) == pytest.approx(1 / (2 * sigma), rel=1e-10)
        assert convergence_radius_lower_bound(g, 12) == pytest.approx(2 * sigma, rel=1e-10)


def test_sampled_gaussian_reproduces_analytic_derivatives(psf):
    s = sampled(psf.grid, psf.derivative(0))
    assert s.sigma == pytest.approx(1.0, rel=1e-10)
    for n in range(4):
        np.testing.assert_allclose(s.derivative(n), psf.derivative(n), atol=1e-8)


def test_sampled_rejects_undersampled():
    g = Grid.uniform(-10, 10, 64)
    with pytest.raises(NotDifferentiable):
        sampled(g, np.exp(-20 * g.nodes**2))


def test_sampled_rejects_non_orthogonal_derivatives(psf):
    tilted = psf.derivative(0) * np.exp(0.5j * psf.grid.nodes)
    with pytest.raises(PsfAssumptionViolated):
        sampled(psf.grid, tilted)


def test_check_prop_passes_for_symmetric_models(psf):
    assert check_prop_1d(psf, 8) < 1e-12
    assert check_prop_1d(sinc(1.0), 4) < 1e-12


def test_load_sampled_roundtrip(tmp_path, psf):
    path = tmp_path / "psf.csv"
    np.savetxt(path, np.column_stack([psf.grid.nodes, 3 * psf.derivative(0).real]), delimiter=",")
    p = load_sampled(path)
    assert norm2(p) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(p.derivative(2), psf.derivative(2), atol=1e-7)


def test_order_too_high():
    with pytest.raises(OrderTooHigh):
        gaussian(1.0, lmax=4).derivative(5)


def test_grid_validation():
    with pytest.raises(ValidationError):
        Grid(np.array([0.0, 1.0, 0.5]), np.ones(3))
    with pytest.raises(ValidationError):
        Grid(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.0, 1.0]))
    assert default_grid(1.0).is_symmetric()
    assert not Grid.uniform(-1, 2, 31).is_symmetric()


def test_grid_mismatch(psf):
    with pytest.raises(GridMismatch):
        inner_product(psf.derivative(0), np.ones(10), psf.grid)


def test_psf2d():
    p = Psf2D.gaussian(1.0, 2.0)
    assert not p.circular
    dkx, dky, r = delta_k(p)
    assert (dkx, dky) == pytest.approx((0.5, 0.25), rel=1e-10)
    assert r == pytest.approx(0.0, abs=1e-14)
    assert Psf2D.gaussian(1.0).circular
    with pytest.raises(ValidationError):
        Psf2D(sinc(1.0), sinc(1.0), circular=True)
    d = p.derivative((1, 2))
    np.testing.assert_allclose(d, np.outer(p.fx.derivative(1), p.fy.derivative(2)))
    assert math.isclose(float(np.sum(np.abs(p.derivative((0, 0))) ** 2)
                              * p.fx.grid.spacing * p.fy.grid.spacing), 1.0, rel_tol=1e-9)
