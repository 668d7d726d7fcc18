"""Ion histories and aggregated implantation profiles."""

import math
from dataclasses import dataclass

import numpy as np

from .. import _accel
from ..rng import derive_keys, derive_seed
from . import _kernels
from .materials import IonBeamSpec, TargetMaterial
from .physics import CUTOFF_ENERGY, E2, screening_length, stopping_coefficient

DEFAULT_BIN_WIDTH = 2.0  # nm


@dataclass(frozen=True)
class IonHistory:
    """One primary ion, from entry to rest (or exit through the surface)."""

    collision_positions: np.ndarray  # (n, 3) nm
    collision_energies: np.ndarray  # ion energy just before each collision, eV
    energy_transfers: np.ndarray  # eV
    partner_species: np.ndarray  # component index
    stop_position: tuple
    vacancies: tuple  # per target component
    initial_energy: float  # eV
    nuclear_loss: float
    electronic_loss: float
    residual_energy: float
    backscattered: bool

    @property
    def stop_depth(self):
        return self.stop_position[2]

    @property
    def n_collisions(self):
        return int(self.energy_transfers.shape[0])

    def energy_balance_error(self):
        """Relative mismatch of E0 against nuclear + electronic + residual."""
        total = self.nuclear_loss + self.electronic_loss + self.residual_energy
        return abs(total - self.initial_energy) / self.initial_energy


@dataclass(frozen=True)
class ImplantProfile:
    depth_edges: np.ndarray  # nm
    depth_counts: np.ndarray  # stopped ions per bin
    vacancy_counts: np.ndarray  # (n_species, n_bins)
    lateral_edges: np.ndarray  # radial distance from the beam axis, nm
    lateral_counts: np.ndarray
    mean_depth: float
    longitudinal_straggle: float
    lateral_straggle: float  # radial: sqrt(var_x + var_y)
    lateral_straggle_axis: float  # per transverse axis: sqrt((var_x + var_y) / 2)
    lateral_mean: tuple  # (mean_x, mean_y)
    n_ions: int
    n_backscattered: int
    vacancies_per_ion: tuple  # per species
    species: tuple
    seed: int
    energy_kev: float
    stop_positions: np.ndarray  # (n_ions, 3), depth along z

    def species_index(self, symbol):
        return self.species.index(symbol)

    def vacancy_depth_counts(self, symbol="Si"):
        return self.vacancy_counts[self.species_index(symbol)]

    @property
    def bin_centers(self):
        return 0.5 * (self.depth_edges[1:] + self.depth_edges[:-1])


def _kernel_args(beam, target, bin_width):
    zt, mt, frac, ed = target.arrays()
    z1, m1 = float(beam.z), float(beam.mass)
    a_scr = np.array([screening_length(z1, z2) for z2 in zt])
    eps_fac = mt / (m1 + mt) * a_scr / (z1 * zt * E2)
    gam = 4.0 * m1 * mt / (m1 + mt) ** 2
    se_coef = stopping_coefficient(z1, m1, target)
    e0 = beam.energy_kev * 1e3
    # electronic loss alone bounds the path length: int dE / (c sqrt(E)) = 2 sqrt(E0) / c
    path_bound = 2.0 * math.sqrt(e0) / se_coef + 2.0 * target.mean_free_path
    n_bins = max(1, int(math.ceil(path_bound / bin_width)))
    cum = np.cumsum(frac)
    return dict(
        e0=e0,
        direction=beam.direction,
        m1=m1,
        tm=mt,
        cum_frac=cum,
        ed=ed,
        a_scr=a_scr,
        eps_fac=eps_fac,
        gam=gam,
        lam=target.mean_free_path,
        pmax=target.max_impact_parameter,
        se_coef=se_coef,
        cutoff=CUTOFF_ENERGY,
        bin_width=float(bin_width),
        n_bins=n_bins,
        path_bound=path_bound,
    )


def simulate_ion(beam: IonBeamSpec, target: TargetMaterial, seed: int, index: int = 0) -> IonHistory:
    """Follow a single ion; identical output for identical (seed, index)."""
    args = _kernel_args(beam, target, DEFAULT_BIN_WIDTH)
    key = np.uint64(derive_seed(seed, f"transport/ion/{index}"))
    cap = int(math.ceil(args["path_bound"] / args["lam"])) + 16
    n_sp = len(target.components)
    out = np.zeros(_kernels.N_COLS)
    vac = np.zeros(n_sp)
    hist = np.zeros((n_sp, args["n_bins"]))
    rec_pos = np.zeros((cap, 3))
    rec_t = np.zeros(cap)
    rec_e = np.zeros(cap)
    rec_sp = np.zeros(cap, dtype=np.int64)
    d = args["direction"]
    n = _kernels.track_one(
        args["e0"], d[0], d[1], d[2], key, args["m1"],
        args["tm"], args["cum_frac"], args["ed"], args["a_scr"], args["eps_fac"], args["gam"],
        args["lam"], args["pmax"], args["se_coef"], args["cutoff"],
        args["bin_width"], hist, out, vac,
        rec_pos, rec_t, rec_e, rec_sp,
    )
    n = int(n)
    return IonHistory(
        collision_positions=rec_pos[:n].copy(),
        collision_energies=rec_e[:n].copy(),
        energy_transfers=rec_t[:n].copy(),
        partner_species=rec_sp[:n].copy(),
        stop_position=(float(out[0]), float(out[1]), float(out[2])),
        vacancies=tuple(float(v) for v in vac),
        initial_energy=args["e0"],
        nuclear_loss=float(out[_kernels.COL_NUCLEAR]),
        electronic_loss=float(out[_kernels.COL_ELECTRONIC]),
        residual_energy=float(out[_kernels.COL_E_FINAL]),
        backscattered=bool(out[_kernels.COL_BACK]),
    )


def track_ions(beam, target, seed, n_ions, bin_width=DEFAULT_BIN_WIDTH, backend=None):
    """Raw per-ion results: (table, vacancies per ion, vacancy histogram, args)."""
    args = _kernel_args(beam, target, bin_width)
    keys = derive_keys(seed, "transport/ion", n_ions)
    if backend is None:
        backend = _accel.backend()
    if backend == "numba" and not _accel.USE_NUMBA:
        raise RuntimeError("numba backend requested but disabled")
    kernel = _kernels.track_ions_numba if backend == "numba" else _kernels.track_ions_numpy
    table, vac, vac_hist = kernel(
        args["e0"], args["direction"], keys, args["m1"],
        args["tm"], args["cum_frac"], args["ed"], args["a_scr"], args["eps_fac"], args["gam"],
        args["lam"], args["pmax"], args["se_coef"], args["cutoff"], args["bin_width"], args["n_bins"],
    )
    return table, vac, vac_hist, args


def simulate_profile(beam, target, n_ions, seed, bin_width=DEFAULT_BIN_WIDTH, backend=None):
    """Aggregate ``n_ions`` independent histories into an :class:`ImplantProfile`."""
    if n_ions < 1:
        raise ValueError("n_ions must be at least 1")
    table, vac, vac_hist, args = track_ions(beam, target, seed, n_ions, bin_width, backend)
    return profile_from_table(table, vac, vac_hist, args, beam, target, seed)


def profile_from_table(table, vac, vac_hist, args, beam, target, seed):
    n_ions = table.shape[0]
    bw = args["bin_width"]
    n_bins = args["n_bins"]
    stops = table[:, _kernels.COL_X:_kernels.COL_Z + 1].copy()
    back = table[:, _kernels.COL_BACK] > 0.5
    depth = stops[:, 2]
    n_bins = max(n_bins, int(math.ceil(depth.max() / bw)) + 1) if depth.size else n_bins
    if n_bins > vac_hist.shape[1]:
        vac_hist = np.pad(vac_hist, ((0, 0), (0, n_bins - vac_hist.shape[1])))
    edges = np.arange(n_bins + 1) * bw
    idx = np.minimum((depth / bw).astype(np.int64), n_bins - 1)
    depth_counts = np.bincount(idx, minlength=n_bins).astype(np.int64)

    implanted = ~back
    if implanted.any():
        zi = depth[implanted]
        xi = stops[implanted, 0]
        yi = stops[implanted, 1]
        mean_depth = float(np.mean(zi))
        long_str = float(np.std(zi))
        var_x = float(np.var(xi))
        var_y = float(np.var(yi))
        lat_mean = (float(np.mean(xi)), float(np.mean(yi)))
    else:
        mean_depth = long_str = var_x = var_y = 0.0
        lat_mean = (0.0, 0.0)
    radial = np.hypot(stops[:, 0], stops[:, 1])
    r_bins = max(1, int(math.ceil(radial.max() / bw)) + 1) if radial.size else 1
    r_edges = np.arange(r_bins + 1) * bw
    r_counts = np.bincount(np.minimum((radial / bw).astype(np.int64), r_bins - 1), minlength=r_bins)

    return ImplantProfile(
        depth_edges=edges,
        depth_counts=depth_counts,
        vacancy_counts=vac_hist,
        lateral_edges=r_edges,
        lateral_counts=r_counts.astype(np.int64),
        mean_depth=mean_depth,
        longitudinal_straggle=long_str,
        lateral_straggle=math.sqrt(var_x + var_y),
        lateral_straggle_axis=math.sqrt(0.5 * (var_x + var_y)),
        lateral_mean=lat_mean,
        n_ions=int(n_ions),
        n_backscattered=int(back.sum()),
        vacancies_per_ion=tuple(float(v) for v in vac.sum(axis=0) / n_ions),
        species=tuple(c.symbol or str(c.z) for c in target.components),
        seed=int(seed),
        energy_kev=float(beam.energy_kev),
        stop_positions=stops,
    )


def calibrate_electronic_correction(beam, target, target_mean_depth, n_ions=4000, seed=0, lo=0.5, hi=3.0, tol=0.005):
    """Bisect the electronic-stopping multiplier to hit a mean projected range.

    Mean depth decreases monotonically with the multiplier. Returns the
    multiplier rounded to ``tol``.
    """
    from dataclasses import replace

    def depth(c):
        return simulate_profile(beam, replace(target, electronic_correction=c), n_ions, seed).mean_depth

    if not depth(lo) > target_mean_depth > depth(hi):
        raise ValueError("target depth not bracketed by [lo, hi]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if depth(mid) > target_mean_depth:
            lo = mid
        else:
            hi = mid
    return round(0.5 * (lo + hi) / tol) * tol
