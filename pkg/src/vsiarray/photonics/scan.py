"""Confocal scan images of a DefectArray."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ..rng import generator
from .emitter import EmitterModel

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass(frozen=True)
class Optics:
    psf_fwhm_um: float = 0.5
    background_kcps: float = 2.0

    def __post_init__(self):
        if self.psf_fwhm_um < 0 or self.background_kcps < 0:
            raise ValueError("PSF width and background must be non-negative")

    @property
    def sigma_um(self):
        return self.psf_fwhm_um * FWHM_TO_SIGMA


@dataclass(frozen=True)
class PixelGrid:
    nx: int
    ny: int
    pitch_um: float = 0.1
    origin_um: tuple = (0.0, 0.0)  # centre of pixel (0, 0)
    dwell_s: float = 0.05

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("image needs at least one pixel")
        if not (self.pitch_um > 0 and self.dwell_s > 0):
            raise ValueError("pixel pitch and dwell must be positive")

    @property
    def x(self):
        return self.origin_um[0] + self.pitch_um * np.arange(self.nx)

    @property
    def y(self):
        return self.origin_um[1] + self.pitch_um * np.arange(self.ny)

    def contains(self, x, y):
        half = 0.5 * self.pitch_um
        x0, y0 = self.origin_um
        return (x0 - half <= x < x0 + (self.nx - 0.5) * self.pitch_um) and (
            y0 - half <= y < y0 + (self.ny - 0.5) * self.pitch_um
        )

    def index_of(self, x, y):
        """(row, col) of the pixel containing (x, y)."""
        c = int(np.floor((x - self.origin_um[0]) / self.pitch_um + 0.5))
        r = int(np.floor((y - self.origin_um[1]) / self.pitch_um + 0.5))
        return r, c


def grid_for_pattern(pattern, margin_um=2.0, pitch_um=0.1, dwell_s=0.05):
    """Pixel grid covering the pattern extent plus ``margin_um`` on every side."""
    w, h = pattern.extent
    nx = int(np.ceil((w + 2 * margin_um) / pitch_um)) + 1
    ny = int(np.ceil((h + 2 * margin_um) / pitch_um)) + 1
    origin = (pattern.origin[0] - margin_um, pattern.origin[1] - margin_um)
    return PixelGrid(nx, ny, pitch_um, origin, dwell_s)


@dataclass(frozen=True)
class ScanImage:
    counts: np.ndarray  # (ny, nx) integer photon counts
    grid: PixelGrid
    power_mw: float
    seed: int
    optics: Optics = field(default_factory=Optics)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.counts.shape != (self.grid.ny, self.grid.nx):
            raise ValueError("counts shape does not match the pixel grid")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def rate_kcps(self):
        return self.counts / self.grid.dwell_s * 1e-3

    def sidecar(self):
        meta = {
            "width": self.grid.nx,
            "height": self.grid.ny,
            "pixel_pitch_um": self.grid.pitch_um,
            "origin_um": list(self.grid.origin_um),
            "dwell_s": self.grid.dwell_s,
            "power_mw": self.power_mw,
            "psf_fwhm_um": self.optics.psf_fwhm_um,
            "background_kcps": self.optics.background_kcps,
            "seed": self.seed,
        }
        meta.update(self.metadata)
        return meta

    def to_pgm(self):
        maxval = max(int(self.counts.max()), 1)
        if maxval > 65535:
            raise ValueError("pixel counts exceed the 16-bit graymap range; shorten the dwell time")
        lines = ["P2", f"{self.grid.nx} {self.grid.ny}", str(maxval)]
        lines += [" ".join(str(int(v)) for v in row) for row in self.counts]
        return "\n".join(lines) + "\n"

    def save(self, pgm_path, json_path):
        with open(pgm_path, "w") as fh:
            fh.write(self.to_pgm())
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, pgm_path, json_path):
        with open(json_path) as fh:
            meta = json.load(fh)
        counts = read_pgm(pgm_path)
        grid = PixelGrid(
            int(meta.pop("width")),
            int(meta.pop("height")),
            float(meta.pop("pixel_pitch_um")),
            tuple(meta.pop("origin_um")),
            float(meta.pop("dwell_s")),
        )
        optics = Optics(float(meta.pop("psf_fwhm_um")), float(meta.pop("background_kcps")))
        return cls(counts, grid, float(meta.pop("power_mw")), int(meta.pop("seed")), optics, meta)


def read_pgm(path):
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain (P2) graymap")
    nx, ny, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array(tokens[4:], dtype=np.int64)
    if data.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} pixels, found {data.size}")
    return data.reshape(ny, nx)


def _axis_weights(centers, pitch, pos, sigma):
    """Fraction of a unit 1D Gaussian at ``pos`` falling in each pixel."""
    lo = centers - 0.5 * pitch
    hi = centers + 0.5 * pitch
    if sigma == 0:
        return ((lo <= pos) & (pos < hi)).astype(np.float64)
    s = np.sqrt(2.0) * sigma
    return 0.5 * (erf((hi - pos) / s) - erf((lo - pos) / s))


def peak_fraction(pitch, sigma):
    """Pixel-integrated PSF of a pixel centred on the emitter."""
    if sigma == 0:
        return 1.0
    return float(erf(pitch / (2.0 * np.sqrt(2.0) * sigma)) ** 2)


def expected_rate(array, optics, power, emitter, grid):
    """Expected count rate (kcps) per pixel.

    Each defect contributes brightness * I(power) at the pixel it is centred
    on; the PSF is integrated over pixel areas and sums to one over an
    unbounded grid, so the total signal per defect is I(power)/peak_fraction.
    """
    rate = np.full((grid.ny, grid.nx), float(optics.background_kcps))
    sigma = optics.sigma_um
    amp = emitter.intensity(power) / peak_fraction(grid.pitch_um, sigma)
    xs, ys = grid.x, grid.y
    reach = 6.0 * sigma + grid.pitch_um
    for spot in array.spots:
        for d in spot.defects:
            x = spot.x_um + d.dx_nm * 1e-3
            y = spot.y_um + d.dy_nm * 1e-3
            cx = np.flatnonzero(np.abs(xs - x) <= reach)
            cy = np.flatnonzero(np.abs(ys - y) <= reach)
            if cx.size == 0 or cy.size == 0:
                continue
            wx = _axis_weights(xs[cx], grid.pitch_um, x, sigma)
            wy = _axis_weights(ys[cy], grid.pitch_um, y, sigma)
            rate[cy[0] : cy[-1] + 1, cx[0] : cx[-1] + 1] += d.brightness * amp * np.outer(wy, wx)
    return rate


def render_scan(array, optics, power, emitter, grid, seed, label="scan"):
    """Shot-noise-limited confocal image; counts ~ Poisson(rate * dwell)."""
    if power < 0:
        raise ValueError("power must be non-negative")
    rate = expected_rate(array, optics, power, emitter, grid)
    rng = generator(seed, f"{label}/noise")
    counts = rng.poisson(rate * 1e3 * grid.dwell_s).astype(np.int64)
    return ScanImage(counts, grid, float(power), int(seed), optics)


__all__ = [
    "Optics",
    "PixelGrid",
    "ScanImage",
    "EmitterModel",
    "grid_for_pattern",
    "expected_rate",
    "render_scan",
    "peak_fraction",
    "read_pgm",
]
