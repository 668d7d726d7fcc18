"""Estimators built on the least-squares engine."""

import math
from dataclasses import dataclass, replace

import numpy as np

from ..patterning import poisson_pmf
from .lm import FitResult, least_squares_fit
from .models import (
    g2_binned,
    g2_binned_jac,
    lorentzian,
    lorentzian_jac,
    poisson_curve,
    poisson_jac,
    saturation_curve,
    saturation_jac,
)


@dataclass(frozen=True)
class OdmrSpectrum:
    frequency: np.ndarray  # MHz
    contrast: np.ndarray  # dPL/PL

    def __post_init__(self):
        f = np.asarray(self.frequency, dtype=np.float64)
        if f.size != np.asarray(self.contrast).size:
            raise ValueError("frequency and contrast must have equal length")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")


def _with(result, flags=(), **extra):
    merged = dict(result.extra)
    merged.update(extra)
    return replace(result, flags=tuple(result.flags) + tuple(f for f in flags if f not in result.flags), extra=merged)


def odmr_initial_guess(f, y):
    baseline = float(np.median(y))
    dev = y - baseline
    i = int(np.argmax(np.abs(dev)))
    contrast = float(dev[i])
    # width over which the deviation stays beyond half the prominence
    half = np.flatnonzero(dev * np.sign(contrast) >= 0.5 * abs(contrast))
    fwhm = float(f[half[-1]] - f[half[0]]) if half.size > 1 else float(np.median(np.diff(f)) * 2)
    fwhm = max(fwhm, float(np.median(np.diff(f))))
    return np.array([float(f[i]), fwhm, contrast, baseline])


def fit_odmr(spectrum, p0=None, sigma=None):
    """Lorentzian dip or peak: baseline + contrast (G/2)^2 / ((f-f0)^2 + (G/2)^2)."""
    f = np.asarray(spectrum.frequency, dtype=np.float64)
    y = np.asarray(spectrum.contrast, dtype=np.float64)
    p0 = odmr_initial_guess(f, y) if p0 is None else np.asarray(p0, dtype=np.float64)
    res = least_squares_fit(
        lorentzian, f, y, p0, sigma=sigma, jac=lorentzian_jac, names=("f0", "fwhm", "contrast", "baseline")
    )
    vals = res.values.copy()
    vals[1] = abs(vals[1])  # the model depends on fwhm only through its square
    res = replace(res, values=vals)
    flags = []
    c, sc = res["contrast"], res.sigma_of("contrast")
    if not np.isfinite(sc) or abs(c) < 3 * sc:
        flags.append("no_resonance")
    return _with(res, flags)


def background_correct_g2(c_n, signal, background):
    """g2 = (C_N - (1 - rho^2)) / rho^2 with rho = S / (S + B)."""
    if not signal > 0:
        raise ValueError("signal rate must be positive")
    if background < 0:
        raise ValueError("background rate must be non-negative")
    rho = signal / (signal + background)
    c = np.asarray(c_n, dtype=np.float64)
    if background == 0:
        return c.copy()
    return (c - (1.0 - rho * rho)) / (rho * rho)


def _smooth(y, n=5):
    if y.size < n:
        return y
    k = np.ones(n) / n
    return np.convolve(np.pad(y, n // 2, mode="edge"), k, mode="valid")


def g2_initial_guess(tau, g, bin_width):
    t = np.abs(tau)
    order = np.argsort(t)
    ts, gs = t[order], _smooth(g[np.argsort(tau)])[np.argsort(np.argsort(tau))][order]
    tmax = ts[-1]
    g0 = float(np.mean(gs[: min(3, gs.size)]))
    peak = int(np.argmax(gs))
    b = max(float(gs[peak]) - 1.0, 0.0)
    a = max(b - g0, 0.0)
    target = 0.5 * (g0 + gs[peak])
    rise = np.flatnonzero(gs[: peak + 1] >= target)
    tau1 = float(ts[rise[0]]) if rise.size and ts[rise[0]] > 0 else 2.0 * bin_width
    tail = np.flatnonzero((ts > ts[peak]) & (gs - 1.0 <= b / math.e))
    tau2 = float(ts[tail[0]]) if tail.size and b > 0 else 10.0 * tau1
    tau1 = min(max(tau1 / math.log(2.0), 0.5 * bin_width), tmax / 4)
    tau2 = min(max(tau2, 2.0 * tau1), tmax)
    # a or b exactly zero would zero a Jacobian column at the start
    return np.array([max(a, 1e-3), max(b, 1e-3), tau1, tau2])


def fit_g2(hist, signal=None, background=0.0, correct=False, p0=None, reweight=2):
    """Fit 1 - (1+a)e^{-|t|/tau1} + b e^{-|t|/tau2} to a correlation histogram.

    The model is averaged over each bin rather than sampled at bin centres;
    with bins comparable to tau1 the centre value underestimates the cusp at
    zero delay and biases g2(0) upwards. Bin variances are Poissonian in the raw coincidence counts; the first pass
    uses uniform weights and ``reweight`` further passes use the fitted
    expectation as the variance. With ``correct`` the curve is background
    corrected first and the weights are rescaled accordingly.
    """
    tau = hist.tau
    norm = hist.expected_uncorrelated
    y = np.asarray(hist.c_n, dtype=np.float64)
    scale = 1.0
    rho = 1.0
    if correct:
        if signal is None:
            raise ValueError("background correction needs the signal rate")
        y = background_correct_g2(y, signal, background)
        rho = signal / (signal + background)
        scale = 1.0 / (rho * rho)
    p = g2_initial_guess(tau, y, hist.bin_width) if p0 is None else np.asarray(p0, dtype=np.float64)
    names = ("a", "b", "tau1", "tau2")
    x = np.column_stack([hist.edges[:-1], hist.edges[1:]])
    res = least_squares_fit(g2_binned, x, y, p, jac=g2_binned_jac, names=names)
    for _ in range(reweight):
        if not np.all(np.isfinite(res.values)):
            break
        model = g2_binned(x, res.values)
        measured = 1.0 - rho * rho + rho * rho * model if correct else model
        var_counts = np.maximum(measured, 1.0 / max(norm, 1e-300)) * norm
        sig = np.sqrt(var_counts) / norm * scale
        res = least_squares_fit(
            g2_binned, x, y, res.values, sigma=sig, jac=g2_binned_jac, names=names, absolute_sigma=True
        )
    g0 = res["b"] - res["a"]
    if res.covariance is not None:
        c = res.covariance
        g0_sigma = float(np.sqrt(max(c[0, 0] + c[1, 1] - 2 * c[0, 1], 0.0)))
    else:
        g0_sigma = float("inf")
    # b - a is the dip of the continuous curve; when tau1 collapses below the
    # bin width the data show no dip even if b - a is small
    i = hist.zero_bin
    g0_bin = float(g2_binned(x[i : i + 1], res.values)[0])
    flags = [] if g0 < 0.5 and g0_bin < 0.5 else ["not_antibunched"]
    return _with(
        res, flags, g2_at_zero=float(g0), g2_at_zero_sigma=g0_sigma, g2_zero_bin=g0_bin, corrected=bool(correct)
    )


def saturation_initial_guess(power, intensity):
    # 1/I = 1/I_S + (P_S/I_S)(1/P) is linear in 1/P
    ok = (power > 0) & (intensity > 0)
    if ok.sum() >= 2:
        slope, icpt = np.polyfit(1.0 / power[ok], 1.0 / intensity[ok], 1)
        if icpt > 0 and slope > 0:
            return np.array([1.0 / icpt, slope / icpt])
    return np.array([float(np.max(intensity)) * 1.5, float(np.median(power))])


def fit_saturation(power, intensity, sigma=None, p0=None):
    """Fit I(P) = I_S / (1 + P_S / P)."""
    power = np.asarray(power, dtype=np.float64)
    intensity = np.asarray(intensity, dtype=np.float64)
    if power.size < 3:
        raise ValueError("need at least three (power, intensity) points")
    p0 = saturation_initial_guess(power, intensity) if p0 is None else p0
    res = least_squares_fit(
        saturation_curve, power, intensity, p0, sigma=sigma, jac=saturation_jac, names=("i_sat", "p_sat")
    )
    flags = []
    ps, sps = res["p_sat"], res.sigma_of("p_sat")
    if not np.isfinite(sps) or sps > 0.5 * abs(ps) or power.max() < ps:
        flags.append("linear_regime")
    return _with(res, flags)


def fit_poisson(k, least_squares=True):
    """Poisson mean of per-spot defect counts.

    The MLE is the sample mean with sigma = sqrt(lam/N). Optionally the pmf
    is also least-squares fitted to the normalised histogram (``lam_ls``).
    """
    k = np.asarray(k)
    if k.size == 0:
        raise ValueError("need at least one spot")
    if np.any(k < 0) or np.any(k != np.round(k)):
        raise ValueError("counts must be non-negative integers")
    k = k.astype(np.int64)
    n = k.size
    lam = float(k.mean())
    sig = math.sqrt(lam / n)
    hist = np.bincount(k)
    freq = hist / n
    extra = {"histogram": hist.tolist(), "n_spots": int(n)}
    rss = float(np.sum((freq - poisson_pmf(np.arange(hist.size), lam)) ** 2))
    if least_squares:
        ks = np.arange(hist.size + 3, dtype=np.float64)
        fr = np.concatenate([freq, np.zeros(3)])
        ls = least_squares_fit(poisson_curve, ks, fr, [max(lam, 1e-3)], jac=poisson_jac, names=("lam",))
        extra["lam_ls"] = float(ls.values[0])
        extra["lam_ls_sigma"] = float(ls.sigma[0])
    return FitResult(("lam",), np.array([lam]), np.array([sig]), rss, 0, True, 0.0, int(n), (), extra)


@dataclass(frozen=True)
class YieldReport:
    dose: float
    lam: float
    lam_sigma: float
    eta: float
    eta_sigma: float
    single_rate: float
    histogram: tuple
    n_spots: int
    dose_uncertainty: float = 0.0

    def to_dict(self):
        return {
            "dose_ions_per_spot": self.dose,
            "lambda": self.lam,
            "lambda_sigma": self.lam_sigma,
            "conversion_yield": self.eta,
            "conversion_yield_sigma": self.eta_sigma,
            "single_rate": self.single_rate,
            "histogram": list(self.histogram),
            "n_spots": self.n_spots,
            "dose_uncertainty": self.dose_uncertainty,
        }

    def row(self):
        return (
            f"{self.dose:8.1f}  {self.lam:6.3f} +- {self.lam_sigma:5.3f}"
            f"  {100 * self.eta:7.2f}  {100 * self.single_rate:7.1f}"
        )


TABLE_HEADER = "    dose  lambda +- sigma    eta %  single %"


def yield_report(k, dose, dose_uncertainty=0.0):
    """Conversion yield lam/dose and single-defect rate P(1; lam)."""
    if not dose > 0:
        raise ValueError("dose must be positive")
    fit = fit_poisson(k, least_squares=False)
    lam, sig = fit["lam"], fit.sigma_of("lam")
    eta = lam / dose
    if eta > 1:
        raise ValueError("more defects than incident ions: check the counts or the dose")
    return YieldReport(
        float(dose),
        lam,
        sig,
        eta,
        sig / dose,
        float(poisson_pmf(1, lam)),
        tuple(fit.extra["histogram"]),
        fit.n_data,
        float(dose_uncertainty),
    )


def yield_table(reports):
    return "\n".join([TABLE_HEADER] + [r.row() for r in reports]) + "\n"
