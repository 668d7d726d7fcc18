"""Per-spot intensity readout and defect-count classification."""

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..photonics.scan import _axis_weights, peak_fraction

INTENSITY_UNIT = 8.0  # kcps per V_Si at the reference power
G2_SINGLE_MAX = 0.32
G2_DOUBLE_MAX = 0.65


@dataclass(frozen=True)
class SpotReadout:
    row: int
    col: int
    x_um: float
    y_um: float
    intensity: float  # kcps, clipped at 0
    sigma: float  # kcps, shot noise of the readout
    raw_intensity: float  # kcps, may be negative
    g2_zero: Optional[float] = None
    g2_sigma: Optional[float] = None
    n: Optional[int] = None
    conflict: bool = False

    @property
    def spot_id(self):
        return (self.row, self.col)


class Classification(NamedTuple):
    n: int
    conflict: bool


def classify_spot(intensity, g2_zero=None, unit=INTENSITY_UNIT):
    """Number of defects from the intensity band, cross-checked with g2(0).

    Bands (in units of ``unit``): [0, 1/2) -> 0, [1/2, 1) -> 1, [1, 2) -> 2,
    and from 2 upwards round(I/unit), at least 3. Boundaries belong to the
    upper band. A g2(0) outside [0, 0.32] for one defect, outside (0.32, 0.65]
    for two, or at or below 0.65 for three or more, sets ``conflict``.
    """
    if intensity < 0 or not math.isfinite(intensity):
        raise ValueError("intensity must be finite and non-negative")
    if not unit > 0:
        raise ValueError("intensity unit must be positive")
    x = intensity / unit
    if x < 0.5:
        n = 0
    elif x < 1.0:
        n = 1
    elif x < 2.0:
        n = 2
    else:
        n = max(3, int(math.floor(x + 0.5)))
    conflict = False
    if g2_zero is not None:
        if n == 1:
            conflict = not (0.0 <= g2_zero <= G2_SINGLE_MAX)
        elif n == 2:
            conflict = not (G2_SINGLE_MAX < g2_zero <= G2_DOUBLE_MAX)
        elif n >= 3:
            conflict = g2_zero <= G2_DOUBLE_MAX
    return Classification(n, conflict)


def _aperture_mask(grid, x, y, radius):
    xs, ys = grid.x, grid.y
    cx = np.flatnonzero(np.abs(xs - x) <= radius + 0.5 * grid.pitch_um)
    cy = np.flatnonzero(np.abs(ys - y) <= radius + 0.5 * grid.pitch_um)
    if cx.size == 0 or cy.size == 0:
        return cy, cx, np.zeros((0, 0), dtype=bool)
    r2 = (xs[cx][None, :] - x) ** 2 + (ys[cy][:, None] - y) ** 2
    return cy, cx, r2 <= radius * radius


def aperture_factor(grid, optics, x, y, radius, straggle_um=0.0):
    """Mean expected signal over the aperture relative to the peak pixel.

    The expected spot profile is the PSF convolved with the lateral
    implantation spread, which is again Gaussian.
    """
    sigma_psf = optics.sigma_um
    sigma = math.hypot(sigma_psf, straggle_um)
    cy, cx, mask = _aperture_mask(grid, x, y, radius)
    wx = _axis_weights(grid.x[cx], grid.pitch_um, x, sigma)
    wy = _axis_weights(grid.y[cy], grid.pitch_um, y, sigma)
    w = np.outer(wy, wx)[mask]
    return float(w.mean() / peak_fraction(grid.pitch_um, sigma_psf))


def detect_spots(image, pattern, aperture_radius_um=None, straggle_nm=0.0, background_radius_um=None):
    """Background-subtracted intensity (kcps, peak-equivalent) of every spot.

    The aperture is a disc of ``aperture_radius_um`` (default 1.5 PSF FWHM,
    which holds nearly all of the PSF so the readout hardly depends on where
    the defects sit inside the spot) around each nominal position. Background is the median rate of
    pixels farther than ``background_radius_um`` (default two FWHM) from all
    spots. Dividing by the aperture factor converts the aperture mean to the
    rate of the brightest pixel of one centred emitter, so a spot with k
    defects reads about k * I(power).
    """
    grid = image.grid
    fwhm = image.optics.psf_fwhm_um
    radius = aperture_radius_um if aperture_radius_um is not None else max(1.5 * fwhm, 0.5 * grid.pitch_um)
    bg_radius = background_radius_um if background_radius_um is not None else max(2.0 * fwhm, radius + 2 * grid.pitch_um)
    rate = image.counts / grid.dwell_s * 1e-3
    xs, ys = grid.x, grid.y
    far = np.ones(rate.shape, dtype=bool)
    positions = pattern.positions()
    for x, y in positions:
        cy, cx, mask = _aperture_mask(grid, x, y, bg_radius)
        if mask.size:
            sub = far[cy[0] : cy[-1] + 1, cx[0] : cx[-1] + 1]
            sub &= ~mask
    background = float(np.median(rate[far])) if far.any() else 0.0
    straggle_um = straggle_nm * 1e-3
    out = []
    for r, c, x, y in pattern.spots():
        if not grid.contains(x, y):
            warnings.warn(f"spot ({r},{c}) at ({x:.2f}, {y:.2f}) um lies outside the image; skipped")
            continue
        cy, cx, mask = _aperture_mask(grid, x, y, radius)
        counts = image.counts[cy[0] : cy[-1] + 1, cx[0] : cx[-1] + 1][mask]
        npx = counts.size
        mean_rate = counts.mean() / grid.dwell_s * 1e-3
        factor = aperture_factor(grid, image.optics, x, y, radius, straggle_um)
        raw = (mean_rate - background) / factor
        sigma = math.sqrt(max(counts.sum(), 1)) / npx / grid.dwell_s * 1e-3 / factor
        out.append(SpotReadout(r, c, float(x), float(y), max(raw, 0.0), sigma, raw))
    return out


def classify_readouts(readouts, unit=INTENSITY_UNIT):
    """Attach defect counts (and g2 conflicts) to each readout."""
    result = []
    for ro in readouts:
        n, conflict = classify_spot(ro.intensity, ro.g2_zero, unit)
        result.append(
            SpotReadout(
                ro.row, ro.col, ro.x_um, ro.y_um, ro.intensity, ro.sigma, ro.raw_intensity,
                ro.g2_zero, ro.g2_sigma, n, conflict,
            )
        )
    return result
