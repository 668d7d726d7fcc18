"""Dose calibration, spot patterns and stochastic defect placement."""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import elementary_charge
from scipy.special import gammaln

from .rng import generator

NOMINAL_DOSES = (100, 80, 60, 40, 20)


def dose_from_dwell(current_pa, dwell_us):
    """Expected ions per spot delivered by ``current_pa`` for ``dwell_us``."""
    if not current_pa > 0:
        raise ValueError("beam current must be positive")
    if dwell_us < 0:
        raise ValueError("dwell time must be non-negative")
    return current_pa * 1e-12 * dwell_us * 1e-6 / elementary_charge


def dwell_for_dose(current_pa, dose, resolution_us=0.1):
    """Dwell time (multiple of the beam blanker resolution) closest to ``dose``."""
    if not current_pa > 0:
        raise ValueError("beam current must be positive")
    if dose < 0:
        raise ValueError("dose must be non-negative")
    t = dose * elementary_charge / (current_pa * 1e-12) * 1e6
    if resolution_us:
        t = round(t / resolution_us) * resolution_us
    return t


def dose_uncertainty(current_pa, dwell_resolution_us):
    """Dose granularity set by the dwell-time resolution."""
    if not (current_pa > 0 and dwell_resolution_us > 0):
        raise ValueError("inputs must be positive")
    return dose_from_dwell(current_pa, dwell_resolution_us)


def nominal_dose(dose, classes=NOMINAL_DOSES):
    """Nearest nominal dose class (e.g. 98.6 ions/spot is the 100 class)."""
    return min(classes, key=lambda c: abs(c - dose))


@dataclass(frozen=True)
class DoseSpec:
    beam_current: float  # pA
    dwell_time: float  # us

    def __post_init__(self):
        if not self.beam_current > 0:
            raise ValueError("beam current must be positive")
        if self.dwell_time < 0:
            raise ValueError("dwell time must be non-negative")

    @property
    def dose(self):
        return dose_from_dwell(self.beam_current, self.dwell_time)


@dataclass(frozen=True)
class SpotPattern:
    rows: int
    cols: int
    pitch: float  # um
    origin: tuple = (0.0, 0.0)  # um

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("pattern needs at least one row and column")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")

    @property
    def n_spots(self):
        return self.rows * self.cols

    def positions(self):
        """(n_spots, 2) array of (x, y) in um, row-major."""
        r, c = np.mgrid[0:self.rows, 0:self.cols]
        x = self.origin[0] + c.ravel() * self.pitch
        y = self.origin[1] + r.ravel() * self.pitch
        return np.column_stack([x, y]).astype(np.float64)

    def spots(self):
        """Iterate (row, col, x_um, y_um)."""
        for r in range(self.rows):
            for c in range(self.cols):
                yield r, c, self.origin[0] + c * self.pitch, self.origin[1] + r * self.pitch

    @property
    def extent(self):
        return ((self.cols - 1) * self.pitch, (self.rows - 1) * self.pitch)

    def to_dict(self):
        return {
            "rows": self.rows,
            "cols": self.cols,
            "pitch_um": self.pitch,
            "origin_um": list(self.origin),
            "spots": [{"row": r, "col": c, "x_um": x, "y_um": y} for r, c, x, y in self.spots()],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            rows=int(data["rows"]),
            cols=int(data["cols"]),
            pitch=float(data["pitch_um"]),
            origin=tuple(data.get("origin_um", (0.0, 0.0))),
        )


def build_pattern(rows, cols, pitch, origin=(0.0, 0.0)):
    return SpotPattern(rows, cols, float(pitch), tuple(float(o) for o in origin))


@dataclass(frozen=True)
class Defect:
    dx_nm: float
    dy_nm: float
    depth_nm: float
    brightness: float = 1.0


@dataclass(frozen=True)
class Spot:
    row: int
    col: int
    x_um: float
    y_um: float
    defects: tuple = ()

    @property
    def k(self):
        return len(self.defects)


@dataclass(frozen=True)
class DefectArray:
    pattern: SpotPattern
    spots: tuple
    dose: float
    conversion_yield: float
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def counts(self):
        return np.array([s.k for s in self.spots], dtype=np.int64)

    def to_dict(self):
        meta = {
            "dose_ions_per_spot": self.dose,
            "conversion_yield": self.conversion_yield,
            "seed": self.seed,
            "rows": self.pattern.rows,
            "cols": self.pattern.cols,
            "pitch_um": self.pattern.pitch,
            "origin_um": list(self.pattern.origin),
        }
        meta.update(self.metadata)
        return {
            "metadata": meta,
            "spots": [
                {
                    "row": s.row,
                    "col": s.col,
                    "x_um": s.x_um,
                    "y_um": s.y_um,
                    "k": s.k,
                    "defects": [
                        {"dx_nm": d.dx_nm, "dy_nm": d.dy_nm, "depth_nm": d.depth_nm, "brightness": d.brightness}
                        for d in s.defects
                    ],
                }
                for s in self.spots
            ],
        }

    @classmethod
    def from_dict(cls, data):
        meta = dict(data["metadata"])
        pattern = SpotPattern(
            rows=int(meta.pop("rows")),
            cols=int(meta.pop("cols")),
            pitch=float(meta.pop("pitch_um")),
            origin=tuple(meta.pop("origin_um", (0.0, 0.0))),
        )
        spots = []
        for s in data["spots"]:
            defects = tuple(Defect(d["dx_nm"], d["dy_nm"], d["depth_nm"], d.get("brightness", 1.0)) for d in s["defects"])
            if len(defects) != s["k"]:
                raise ValueError(f"spot ({s['row']},{s['col']}): k={s['k']} but {len(defects)} defects")
            spots.append(Spot(s["row"], s["col"], s["x_um"], s["y_um"], defects))
        return cls(
            pattern=pattern,
            spots=tuple(spots),
            dose=float(meta.pop("dose_ions_per_spot")),
            conversion_yield=float(meta.pop("conversion_yield")),
            seed=int(meta.pop("seed")),
            metadata=meta,
        )

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _depth_sampler(profile, species="Si"):
    if profile is None:
        return None
    counts = np.asarray(profile.vacancy_depth_counts(species), dtype=np.float64)
    if counts.sum() <= 0:
        counts = np.asarray(profile.depth_counts, dtype=np.float64)
    edges = profile.depth_edges[: counts.size + 1]
    cdf = np.cumsum(counts)
    return edges, cdf / cdf[-1]


def sample_defect_array(
    pattern,
    dose,
    conversion_yield,
    profile,
    seed,
    brightness_dispersion=0.0,
    lateral_sigma_nm=None,
):
    """Draw defects for every spot of ``pattern``.

    Per spot the number of arriving ions is Poisson(dose) and each ion leaves a
    V_Si with probability ``conversion_yield``; the defect count is therefore
    Poisson(conversion_yield * dose). Lateral offsets are Gaussian with the
    profile's per-axis lateral straggle, depths follow the Si-vacancy depth
    histogram. Each spot draws from its own ``array/spot/<r,c>`` stream.
    """
    if not 0.0 <= conversion_yield <= 1.0:
        raise ValueError("conversion yield must lie in [0, 1]")
    if dose < 0:
        raise ValueError("dose must be non-negative")
    if lateral_sigma_nm is None:
        lateral_sigma_nm = profile.lateral_straggle_axis if profile is not None else 0.0
    sampler = _depth_sampler(profile)
    spots = []
    for r, c, x, y in pattern.spots():
        rng = generator(seed, f"array/spot/{r},{c}")
        n_ions = rng.poisson(dose)
        k = int(rng.binomial(n_ions, conversion_yield)) if n_ions else 0
        defects = ()
        if k:
            dxy = rng.normal(0.0, 1.0, size=(k, 2)) * lateral_sigma_nm
            if sampler is None:
                depth = np.zeros(k)
            else:
                edges, cdf = sampler
                u = rng.random(k)
                b = np.searchsorted(cdf, u, side="right")
                b = np.minimum(b, cdf.size - 1)
                depth = edges[b] + rng.random(k) * (edges[b + 1] - edges[b])
            if brightness_dispersion > 0:
                bright = np.maximum(rng.normal(1.0, brightness_dispersion, size=k), 0.0)
            else:
                bright = np.ones(k)
            defects = tuple(
                Defect(float(dxy[i, 0]), float(dxy[i, 1]), float(depth[i]), float(bright[i])) for i in range(k)
            )
        spots.append(Spot(r, c, float(x), float(y), defects))
    return DefectArray(pattern, tuple(spots), float(dose), float(conversion_yield), int(seed))


def poisson_pmf(k, lam):
    """exp(-lam) lam^k / k!, evaluated in log space for large k."""
    if lam < 0:
        raise ValueError("Poisson mean must be non-negative")
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k != np.floor(k)):
        raise ValueError("k must be a non-negative integer")
    if lam == 0:
        out = np.where(k == 0, 1.0, 0.0)
    else:
        out = np.exp(k * math.log(lam) - lam - gammaln(k + 1.0))
    return float(out) if out.ndim == 0 else out
