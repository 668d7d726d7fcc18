"""Command line: simulate, fit, analyze and report.

Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.
"""

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_dose_list
from .inference import (
    OdmrSpectrum,
    classify_spot,
    detect_spots,
    fit_g2,
    fit_odmr,
    fit_poisson,
    fit_saturation,
    yield_report,
    yield_table,
)
from .patterning import DefectArray, SpotPattern, dose_uncertainty, sample_defect_array
from .photonics import CorrelationHistogram, ScanImage, grid_for_pattern, hbt_histogram, render_scan, simulate_photon_trace
from .photonics.hbt import correlate
from .rng import derive_seed
from .transport import simulate_profile
from .transport.io import profile_csv, profile_summary

FIT_MODELS = ("odmr", "g2", "saturation", "poisson")


class DataError(RuntimeError):
    """Missing or malformed input data (exit code 1)."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing input: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None


def _dose_label(dose):
    return f"dose_{dose:g}"


def _power_label(power):
    return f"scan_{power:g}mW"


# transport


def run_transport(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    n = int(cfg.data["transport"]["n_ions"])
    profile = simulate_profile(cfg.beam, cfg.target, n, cfg.seed, bin_width=float(cfg.data["transport"]["bin_width_nm"]))
    write_text(os.path.join(out_dir, "profile.csv"), profile_csv(profile))
    summary = profile_summary(profile)
    summary["provenance"] = cfg.provenance()
    write_json(os.path.join(out_dir, "summary.json"), summary)
    return profile, summary


# array


def run_array(cfg, out_dir, profile=None):
    """Transport (unless given), then per dose a DefectArray and scan images."""
    os.makedirs(out_dir, exist_ok=True)
    if profile is None:
        n = int(cfg.data["transport"]["n_ions"])
        profile = simulate_profile(cfg.beam, cfg.target, n, cfg.seed, bin_width=float(cfg.data["transport"]["bin_width_nm"]))
    pattern = cfg.pattern
    o = cfg.data["optics"]
    grid = grid_for_pattern(pattern, margin_um=float(o["margin_um"]), pitch_um=float(o["pixel_um"]), dwell_s=float(o["dwell_s"]))
    optics, emitter = cfg.optics, cfg.emitter
    prov = cfg.provenance()
    entries = []
    for dose in cfg.doses:
        label = _dose_label(dose)
        eta = cfg.conversion_yield(dose)
        seed = derive_seed(cfg.seed, f"array/dose/{dose:g}")
        arr = sample_defect_array(
            pattern, dose, eta, profile, seed, brightness_dispersion=float(cfg.data["brightness_dispersion"])
        )
        arr = DefectArray(arr.pattern, arr.spots, arr.dose, arr.conversion_yield, arr.seed, {"provenance": prov})
        ddir = os.path.join(out_dir, label)
        os.makedirs(ddir, exist_ok=True)
        write_text(os.path.join(ddir, "defects.json"), arr.dumps())
        scans = {}
        for power in o["power_mw"]:
            img = render_scan(arr, optics, float(power), emitter, grid, seed, label=f"scan/{power:g}")
            img = ScanImage(img.counts, img.grid, img.power_mw, img.seed, img.optics, {"provenance": prov, "dose_ions_per_spot": dose})
            name = _power_label(float(power))
            img.save(os.path.join(ddir, name + ".pgm"), os.path.join(ddir, name + ".json"))
            scans[f"{float(power):g}"] = name
        entries.append(
            {
                "dose_ions_per_spot": dose,
                "conversion_yield": eta,
                "dir": label,
                "scans": scans,
                "mean_k": float(arr.counts.mean()),
            }
        )
    manifest = {
        "pattern": pattern.to_dict(),
        "field_of_view_um": {
            "x": [grid.x[0] - 0.5 * grid.pitch_um, grid.x[-1] + 0.5 * grid.pitch_um],
            "y": [grid.y[0] - 0.5 * grid.pitch_um, grid.y[-1] + 0.5 * grid.pitch_um],
        },
        "reference_power_mw": float(o["reference_power_mw"]),
        "straggle_nm": profile.lateral_straggle_axis,
        "transport": profile_summary(profile),
        "beam_current_pa": float(cfg.data["beam"]["current_pa"]),
        "dwell_resolution_us": float(cfg.data["beam"]["dwell_resolution_us"]),
        "doses": entries,
        "provenance": prov,
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


# analysis


def analyze_dir(cfg, in_dir, doses=None):
    """detect -> classify -> Poisson fit -> yield report for every dose in a manifest."""
    manifest = read_json(os.path.join(in_dir, "manifest.json"))
    pattern = SpotPattern.from_dict(manifest["pattern"])
    ref = f"{float(manifest['reference_power_mw']):g}"
    emitter = cfg.emitter
    cls = cfg.data["classification"]
    unit = float(cls["intensity_unit_kcps"])
    # readouts are taken at the reference power and rescaled to the power at which the unit is defined
    to_unit_power = emitter.intensity(float(cls["unit_power_mw"])) / emitter.intensity(float(manifest["reference_power_mw"]))
    du = dose_uncertainty(float(manifest["beam_current_pa"]), float(manifest["dwell_resolution_us"]))
    wanted = None if doses is None else {f"{d:g}" for d in doses}
    rows = []
    reports = []
    for entry in manifest["doses"]:
        dose = float(entry["dose_ions_per_spot"])
        if wanted is not None and f"{dose:g}" not in wanted:
            continue
        if ref not in entry["scans"]:
            raise DataError(f"dose {dose:g}: no scan at the reference power {ref} mW")
        base = os.path.join(in_dir, entry["dir"], entry["scans"][ref])
        try:
            img = ScanImage.load(base + ".pgm", base + ".json")
        except FileNotFoundError as exc:
            raise DataError(f"missing input: {exc.filename}") from None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            readouts = detect_spots(img, pattern, straggle_nm=float(manifest.get("straggle_nm", 0.0)))
        if not readouts:
            raise DataError(f"dose {dose:g}: no spot lies inside the image")
        intensity = np.array([r.intensity for r in readouts]) * to_unit_power
        n = np.array([classify_spot(i, unit=unit).n for i in intensity], dtype=np.int64)
        rep = yield_report(n, dose, du)
        reports.append(rep)
        row = rep.to_dict()
        row["readout_intensity_kcps_mean"] = float(intensity.mean())
        truth = os.path.join(in_dir, entry["dir"], "defects.json")
        if os.path.exists(truth):
            arr = DefectArray.from_dict(read_json(truth))
            k_true = arr.counts
            by_id = {(s.row, s.col): s.k for s in arr.spots}
            kt = np.array([by_id[(r.row, r.col)] for r in readouts])
            row["truth"] = {
                "conversion_yield": arr.conversion_yield,
                "lambda_sample": float(k_true.mean()),
                "misclassified": int(np.sum(kt != n)),
            }
        rows.append(row)
    if not reports:
        raise DataError("no dose in the input matches the requested dose list")
    return {
        "doses": rows,
        "table": yield_table(reports),
        "transport": manifest.get("transport"),
        "input_provenance": manifest.get("provenance"),
    }


def write_report(cfg, out_dir, analysis, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    report = dict(analysis)
    table = report.pop("table")
    if extra:
        report.update(extra)
    report["provenance"] = cfg.provenance()
    write_json(os.path.join(out_dir, "report.json"), report)
    lines = ["Conversion yield and single-defect rate per dose", "", table.rstrip("\n"), ""]
    t = report.get("transport") or {}
    if t:
        lines += [
            "Transport",
            f"  mean depth        {t['mean_depth_nm']:.1f} nm",
            f"  long. straggle    {t['long_straggle_nm']:.1f} nm",
            f"  lat. straggle     {t['lat_straggle_nm']:.1f} nm (radial), {t['lat_straggle_axis_nm']:.1f} nm (per axis)",
            f"  Si vacancies/ion  {t['vacancies_per_ion']:.2f}",
            "",
        ]
    g = report.get("hbt_fit")
    if g:
        lines += ["HBT", f"  g2(0) corrected   {g['g2_at_zero']:.3f} +- {g['g2_at_zero_sigma']:.3f}", ""]
    p = report["provenance"]
    lines += ["Provenance", f"  config sha256     {p['config_sha256']}", f"  seed              {p['seed']}", f"  version           {p['version']}"]
    write_text(os.path.join(out_dir, "report.txt"), "\n".join(lines) + "\n")
    return report


# hbt


def run_hbt(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    h = cfg.data["hbt"]
    n, s, b = int(h["n_emitters"]), float(h["signal_kcps"]), float(h["background_kcps"])
    dur, bw, lag = float(h["duration_s"]), float(h["bin_width_ns"]), float(h["max_lag_ns"])
    seed = derive_seed(cfg.seed, "hbt")
    if h["write_trace"]:
        trace = simulate_photon_trace(n, s, b, cfg.emitter, dur, seed)
        trace.to_csv(os.path.join(out_dir, "trace.csv"))
        hist = correlate(trace, bw, lag)
    else:
        hist = hbt_histogram(n, s, b, cfg.emitter, dur, seed, bw, lag)
    hist.to_csv(os.path.join(out_dir, "histogram.csv"))
    total_signal = n * s
    fit = None
    if total_signal > 0:
        res = fit_g2(hist, signal=total_signal, background=b, correct=b > 0)
        fit = res.to_dict()
    meta = {
        "n_emitters": n,
        "signal_kcps_per_emitter": s,
        "background_kcps": b,
        "duration_s": dur,
        "bin_width_ns": bw,
        "max_lag_ns": lag,
        "n1": hist.n1,
        "n2": hist.n2,
        "zero_bin_c_n": float(hist.c_n[hist.zero_bin]),
        "fit": fit,
        "provenance": cfg.provenance(),
    }
    write_json(os.path.join(out_dir, "hbt.json"), meta)
    return meta


# fits


def _read_csv_columns(path):
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except FileNotFoundError:
        raise DataError(f"missing input: {path}") from None
    if len(rows) < 2:
        raise DataError(f"{path}: expected a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if data.shape[1] != len(header):
        raise DataError(f"{path}: rows do not match the header")
    return {h: data[:, i] for i, h in enumerate(header)}


def _column(cols, path, *names):
    for name in names:
        if name in cols:
            return cols[name]
    raise DataError(f"{path}: needs a column named {' or '.join(names)}")


def run_fit(model, path, signal=None, background=0.0, correct=False):
    if model == "g2":
        try:
            hist = CorrelationHistogram.from_csv(path)
        except (FileNotFoundError, OSError):
            raise DataError(f"missing input: {path}") from None
        except (ValueError, KeyError) as exc:
            raise DataError(f"{path}: {exc}") from None
        if correct and signal is None:
            raise ConfigError("--correct needs --signal")
        res = fit_g2(hist, signal=signal, background=background, correct=correct)
    else:
        cols = _read_csv_columns(path)
        if model == "odmr":
            f = _column(cols, path, "frequency_mhz", "frequency")
            c = _column(cols, path, "contrast")
            try:
                spec = OdmrSpectrum(f, c)
            except ValueError as exc:
                raise DataError(f"{path}: {exc}") from None
            res = fit_odmr(spec)
        elif model == "saturation":
            p = _column(cols, path, "power_mw", "power")
            i = _column(cols, path, "intensity_kcps", "intensity")
            res = fit_saturation(p, i)
        else:
            k = _column(cols, path, "k")
            if "spots" in cols:
                k = np.repeat(k, cols["spots"].astype(np.int64))
            res = fit_poisson(k)
    out = res.to_dict()
    out["model"] = model
    return out


# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--ions", type=_positive_int, help="number of ion histories for transport")
    common.add_argument("--dose", help="comma separated dose list, ions/spot")

    parser = argparse.ArgumentParser(prog="vsiarray", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a forward simulation")
    simsub = sim.add_subparsers(dest="what", required=True)
    simsub.add_parser("transport", parents=[common], help="ion range profile (profile.csv, summary.json)")
    simsub.add_parser("array", parents=[common], help="defect arrays and scan images per dose")
    simsub.add_parser("hbt", parents=[common], help="HBT correlation histogram")

    fit = sub.add_parser("fit", help="fit a model to a CSV file, print JSON")
    fit.add_argument("model", choices=FIT_MODELS)
    fit.add_argument("data", help="input CSV")
    fit.add_argument("--signal", type=float, help="g2: signal rate S, kcps")
    fit.add_argument("--background", type=float, default=0.0, help="g2: background rate B, kcps")
    fit.add_argument("--correct", action="store_true", help="g2: background-correct before fitting")

    ana = sub.add_parser("analyze", parents=[common], help="yield report from simulated or recorded images")
    ana.add_argument("--input", help="directory written by 'simulate array' (default <out>/array)")

    sub.add_parser("report", parents=[common], help="full pipeline and consolidated report")
    return parser


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed '{text}'") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count '{text}'") from None
    if v < 1:
        raise argparse.ArgumentTypeError("count must be at least 1")
    return v


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    doses = parse_dose_list(args.dose) if args.dose is not None else None
    return cfg.override(seed=args.seed, out=args.out, ions=args.ions, doses=doses)


def _dispatch(args):
    if args.command == "fit":
        print(dumps(run_fit(args.model, args.data, args.signal, args.background, args.correct)), end="")
        return 0
    if args.config and not os.path.exists(args.config):
        raise DataError(f"missing config file: {args.config}")
    cfg = load_config(args)
    out = cfg.output_dir
    if args.command == "simulate":
        if args.what == "transport":
            run_transport(cfg, os.path.join(out, "transport"))
        elif args.what == "array":
            run_array(cfg, os.path.join(out, "array"))
        else:
            run_hbt(cfg, os.path.join(out, "hbt"))
        return 0
    if args.command == "analyze":
        in_dir = args.input or os.path.join(out, "array")
        analysis = analyze_dir(cfg, in_dir, cfg.doses if args.dose is not None else None)
        write_report(cfg, os.path.join(out, "analysis"), analysis)
        return 0
    # report: everything, sharing one transport run
    profile, _ = run_transport(cfg, os.path.join(out, "transport"))
    run_array(cfg, os.path.join(out, "array"), profile)
    analysis = analyze_dir(cfg, os.path.join(out, "array"))
    hbt = run_hbt(cfg, os.path.join(out, "hbt"))
    em = cfg.emitter
    parity = {
        "saturation_intensity_at_reference_kcps": em.intensity(float(cfg.data["optics"]["reference_power_mw"])),
        "g2_model_at_zero": em.g2_zero,
    }
    g2 = _g2_summary(hbt["fit"]) if hbt["fit"] else None
    write_report(cfg, out, analysis, {"hbt_fit": g2, "parity": parity})
    return 0


def _g2_summary(fit):
    return {
        "g2_at_zero": fit["params"]["g2_at_zero"],
        "g2_at_zero_sigma": fit["sigma"].get("g2_at_zero", math.nan),
        "converged": fit["converged"],
    }


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"vsiarray: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError) as exc:
        print(f"vsiarray: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
