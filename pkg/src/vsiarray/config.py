"""Run configuration: one JSON document, versioned, with fixed units.

Units are part of the key names (keV, pA, um, nm, ns, s, kcps, mW) so a
config file is never ambiguous. Every artifact written by the command line
carries a provenance block holding the SHA-256 of the canonical form of the
effective configuration, the master seed and the package version.
"""

import copy
import hashlib
import json
import math

import numpy as np

from . import __version__
from .patterning import NOMINAL_DOSES, build_pattern
from .photonics import EmitterModel, Optics
from .transport.materials import PRESETS, IonBeamSpec, TargetMaterial

SCHEMA_VERSION = 1
SEED_MAX = 2**64 - 1

# Conversion yield endpoints of the measured dose trend (dose -> eta).
DEFAULT_YIELD = {"100": 0.0544, "20": 0.0695}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 20240,
    "beam": {"energy_kev": 30.0, "current_pa": 0.4, "incidence_deg": 0.0, "dwell_resolution_us": 0.1},
    "target": "4H-SiC",
    "transport": {"n_ions": 10000, "bin_width_nm": 2.0},
    "pattern": {"rows": 10, "cols": 10, "pitch_um": 3.0},
    "doses": list(NOMINAL_DOSES),
    "conversion_yield": DEFAULT_YIELD,
    "brightness_dispersion": 0.0,
    "optics": {
        "psf_fwhm_um": 0.5,
        "background_kcps": 2.0,
        "pixel_um": 0.1,
        "dwell_s": 0.05,
        "margin_um": 2.0,
        "power_mw": [0.5],
        "reference_power_mw": 0.5,
    },
    "emitter": EmitterModel().to_dict(),
    "classification": {"intensity_unit_kcps": 8.0, "unit_power_mw": 0.5},
    "hbt": {
        "n_emitters": 1,
        "signal_kcps": 6.0,
        "background_kcps": 2.0,
        "duration_s": 80000.0,
        "bin_width_ns": 1.0,
        "max_lag_ns": 500.0,
        "write_trace": False,
    },
    "output_dir": "out",
}


class ConfigError(ValueError):
    """Invalid configuration (a usage error, exit code 2)."""


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and isinstance(val, dict) and key not in ("conversion_yield", "emitter"):
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _positive(value, name, allow_zero=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return v


def _count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


class RunConfig:
    """Validated view of a config document."""

    def __init__(self, data=None):
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        self.data = _merge(DEFAULTS, data)
        self._validate()

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls(data)

    def override(self, seed=None, out=None, ions=None, doses=None):
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = seed
        if out is not None:
            data["output_dir"] = str(out)
        if ions is not None:
            data["transport"]["n_ions"] = ions
        if doses is not None:
            data["doses"] = list(doses)
        return RunConfig(data)

    def _validate(self):
        d = self.data
        seed = d["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= SEED_MAX:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        beam = d["beam"]
        for key in ("energy_kev", "current_pa", "dwell_resolution_us"):
            _positive(beam[key], f"beam.{key}")
        try:
            self.beam
            self.target
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid beam or target: {exc}") from None
        _count(d["transport"]["n_ions"], "transport.n_ions")
        _positive(d["transport"]["bin_width_nm"], "transport.bin_width_nm")
        p = d["pattern"]
        _count(p["rows"], "pattern.rows")
        _count(p["cols"], "pattern.cols")
        _positive(p["pitch_um"], "pattern.pitch_um")
        if not isinstance(d["doses"], list) or not d["doses"]:
            raise ConfigError("dose list must be non-empty")
        for dose in d["doses"]:
            _positive(dose, "dose")
        for dose in d["doses"]:
            eta = self.conversion_yield(dose)
            if not 0.0 <= eta <= 1.0:
                raise ConfigError(f"conversion yield at dose {dose} is {eta}, outside [0, 1]")
        _positive(d["brightness_dispersion"], "brightness_dispersion", allow_zero=True)
        o = d["optics"]
        _positive(o["psf_fwhm_um"], "optics.psf_fwhm_um", allow_zero=True)
        _positive(o["background_kcps"], "optics.background_kcps", allow_zero=True)
        for key in ("pixel_um", "dwell_s", "reference_power_mw"):
            _positive(o[key], f"optics.{key}")
        _positive(o["margin_um"], "optics.margin_um", allow_zero=True)
        if not isinstance(o["power_mw"], list) or not o["power_mw"]:
            raise ConfigError("optics.power_mw must be a non-empty list")
        for pw in o["power_mw"]:
            _positive(pw, "optics.power_mw")
        if not any(f"{float(pw):g}" == f"{float(o['reference_power_mw']):g}" for pw in o["power_mw"]):
            raise ConfigError("optics.reference_power_mw must be one of optics.power_mw")
        try:
            self.emitter
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid emitter: {exc}") from None
        c = d["classification"]
        _positive(c["intensity_unit_kcps"], "classification.intensity_unit_kcps")
        _positive(c["unit_power_mw"], "classification.unit_power_mw")
        h = d["hbt"]
        _count(h["n_emitters"], "hbt.n_emitters", minimum=0)
        _positive(h["signal_kcps"], "hbt.signal_kcps", allow_zero=True)
        _positive(h["background_kcps"], "hbt.background_kcps", allow_zero=True)
        for key in ("duration_s", "bin_width_ns", "max_lag_ns"):
            _positive(h[key], f"hbt.{key}")
        if h["max_lag_ns"] < h["bin_width_ns"]:
            raise ConfigError("hbt.max_lag_ns must be at least one bin width")
        if not isinstance(d["output_dir"], str) or not d["output_dir"]:
            raise ConfigError("output_dir must be a non-empty string")

    # typed accessors

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def output_dir(self):
        return self.data["output_dir"]

    @property
    def beam(self):
        b = self.data["beam"]
        return IonBeamSpec(energy_kev=float(b["energy_kev"]), incidence_deg=float(b["incidence_deg"]))

    @property
    def target(self):
        t = self.data["target"]
        if isinstance(t, str):
            try:
                return PRESETS[t.lower()]()
            except KeyError:
                raise ConfigError(f"unknown target preset '{t}' (known: {sorted(PRESETS)})") from None
        return TargetMaterial.from_dict(t)

    @property
    def pattern(self):
        p = self.data["pattern"]
        return build_pattern(int(p["rows"]), int(p["cols"]), float(p["pitch_um"]))

    @property
    def doses(self):
        return [float(x) for x in self.data["doses"]]

    @property
    def optics(self):
        o = self.data["optics"]
        return Optics(psf_fwhm_um=float(o["psf_fwhm_um"]), background_kcps=float(o["background_kcps"]))

    @property
    def emitter(self):
        return EmitterModel.from_dict(self.data["emitter"])

    def conversion_yield(self, dose):
        """Yield at ``dose``: a constant, or linear interpolation in a dose->eta table.

        Outside the tabulated range the nearest endpoint is used.
        """
        eta = self.data["conversion_yield"]
        if isinstance(eta, dict):
            try:
                pts = sorted((float(k), float(v)) for k, v in eta.items())
            except (TypeError, ValueError):
                raise ConfigError("conversion_yield table must map dose to yield") from None
            if not pts:
                raise ConfigError("conversion_yield table is empty")
            xs, ys = zip(*pts)
            return float(np.interp(float(dose), xs, ys))
        return _positive(eta, "conversion_yield", allow_zero=True)

    def canonical(self):
        """Canonical JSON of everything that affects results (not the output location)."""
        data = {k: v for k, v in self.data.items() if k != "output_dir"}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def provenance(self):
        return {
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "tool": "vsiarray",
            "version": __version__,
        }


def parse_dose_list(text):
    """'100,80,20' -> [100.0, 80.0, 20.0]; an empty list is an error."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("dose list must be non-empty")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"cannot parse dose list '{text}'") from None
