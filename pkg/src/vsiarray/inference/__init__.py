"""Least-squares engine and the estimators built on it."""

from .fits import (
    OdmrSpectrum,
    YieldReport,
    background_correct_g2,
    fit_g2,
    fit_odmr,
    fit_poisson,
    fit_saturation,
    yield_report,
    yield_table,
)
from .lm import FitResult, least_squares_fit, numeric_jacobian
from .spots import Classification, SpotReadout, classify_readouts, classify_spot, detect_spots

__all__ = [
    "Classification",
    "FitResult",
    "OdmrSpectrum",
    "SpotReadout",
    "YieldReport",
    "background_correct_g2",
    "classify_readouts",
    "classify_spot",
    "detect_spots",
    "fit_g2",
    "fit_odmr",
    "fit_poisson",
    "fit_saturation",
    "least_squares_fit",
    "numeric_jacobian",
    "yield_report",
    "yield_table",
]
