"""Moment estimation of sub-Rayleigh incoherent scenes.

Fisher information of spatial-mode and imaging measurements, expanded
in the moments of a weak thermal scene, plus the simulation and sweep
tools used to check the expansions.
"""

from .basis import Basis2D, DerivativeBasis, gram_schmidt_basis, hermite_gauss, separable_basis_2d
from .errors import NumericalError, RayleighError, ValidationError
from .fisher import (
    FisherReport,
    appf_counterexample,
    centroid_scheme,
    crb,
    fi_from_series,
    fi_limit_formulas,
    fisher_information,
    qfim_angle,
    qfim_rho2,
    strong_limit_f22,
)
from .povm import (
    Povm,
    centroid_povm,
    direct_imaging_povm,
    dressed_povm,
    interleaved_povm,
    sliver_povm,
    spade_povm,
    table2d_povm,
)
from .prob import strong_series, thermal_exact_probs, weak_exact_probs, weak_series, wick_monte_carlo
from .psf import Grid, Psf2D, PsfModel, default_grid
from .scene import MomentVector, Scene, moments, scaled_family
from .sim import centroid_two_stage, estimate_moments, replicate_estimates, sample_outcomes

__version__ = "0.1.0"
