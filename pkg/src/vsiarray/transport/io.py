"""Profile export: CSV histogram and JSON summary."""

import csv
import io
import json

import numpy as np


def _fmt(x):
    return format(float(x), ".10g")


def profile_rows(profile, species="Si"):
    """(depth_nm, ion_count, vacancy_count) rows, trailing empty bins dropped."""
    vac = profile.vacancy_depth_counts(species)
    ions = profile.depth_counts
    n = min(len(ions), len(vac))
    nonzero = np.flatnonzero((ions[:n] > 0) | (vac[:n] > 0))
    last = int(nonzero[-1]) + 1 if nonzero.size else 1
    centers = profile.bin_centers
    return [(centers[i], int(ions[i]), vac[i]) for i in range(last)]


def profile_csv(profile, species="Si"):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["depth_nm", "ion_count", "vacancy_count"])
    for depth, count, vac in profile_rows(profile, species):
        w.writerow([_fmt(depth), count, _fmt(vac)])
    return buf.getvalue()


def read_profile_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    return data["depth_nm"], data["ion_count"].astype(np.int64), data["vacancy_count"]


def profile_summary(profile, species="Si"):
    si = profile.species_index(species)
    return {
        "mean_depth_nm": profile.mean_depth,
        "long_straggle_nm": profile.longitudinal_straggle,
        "lat_straggle_nm": profile.lateral_straggle,
        "lat_straggle_axis_nm": profile.lateral_straggle_axis,
        "vacancies_per_ion": profile.vacancies_per_ion[si],
        "vacancies_per_ion_by_species": dict(zip(profile.species, profile.vacancies_per_ion)),
        "n_ions": profile.n_ions,
        "n_backscattered": profile.n_backscattered,
        "energy_kev": profile.energy_kev,
        "seed": profile.seed,
    }


def write_profile(profile, csv_path, json_path, extra=None):
    with open(csv_path, "w", newline="") as fh:
        fh.write(profile_csv(profile))
    summary = profile_summary(profile)
    if extra:
        summary.update(extra)
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
