"""Optical forward model: saturation, g2, confocal images, HBT traces."""

from .emitter import EmitterModel, ThreeLevelRates, g2_model, mix_background, saturation_intensity, solve_rates
from .hbt import (
    CorrelationHistogram,
    PhaseType,
    PhotonTrace,
    correlate,
    correlation_edges,
    hbt_histogram,
    simulate_photon_trace,
)
from .scan import Optics, PixelGrid, ScanImage, expected_rate, grid_for_pattern, read_pgm, render_scan

__all__ = [
    "CorrelationHistogram",
    "EmitterModel",
    "Optics",
    "PhaseType",
    "PhotonTrace",
    "PixelGrid",
    "ScanImage",
    "ThreeLevelRates",
    "correlate",
    "correlation_edges",
    "expected_rate",
    "g2_model",
    "grid_for_pattern",
    "hbt_histogram",
    "mix_background",
    "read_pgm",
    "render_scan",
    "saturation_intensity",
    "simulate_photon_trace",
    "solve_rates",
]
