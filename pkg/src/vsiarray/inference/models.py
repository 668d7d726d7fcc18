"""Model curves with analytic Jacobians, all in the form f(x, p)."""

import numpy as np
from scipy.special import gammaln


def lorentzian(f, p):
    f0, fwhm, contrast, baseline = p
    h2 = (0.5 * fwhm) ** 2
    return baseline + contrast * h2 / ((f - f0) ** 2 + h2)


def lorentzian_jac(f, p):
    f0, fwhm, contrast, baseline = p
    h = 0.5 * fwhm
    u = f - f0
    den = u * u + h * h
    d_f0 = contrast * h * h * 2 * u / den**2
    d_fwhm = contrast * h * u * u / den**2  # d/dh * dh/dfwhm(=1/2)
    d_c = h * h / den
    return np.column_stack([d_f0, d_fwhm, d_c, np.ones_like(f)])


def g2_curve(tau, p):
    a, b, tau1, tau2 = p
    t = np.abs(tau)
    with np.errstate(over="ignore", invalid="ignore"):
        return 1.0 - (1.0 + a) * np.exp(-t / tau1) + b * np.exp(-t / tau2)


def g2_jac(tau, p):
    a, b, tau1, tau2 = p
    t = np.abs(tau)
    with np.errstate(over="ignore", invalid="ignore"):
        e1 = np.exp(-t / tau1)
        e2 = np.exp(-t / tau2)
        return np.column_stack([-e1, e2, -(1.0 + a) * e1 * t / tau1**2, b * e2 * t / tau2**2])


def _exp_bin_mean(lo, hi, tau):
    """Mean of exp(-|t|/tau) over [lo, hi] and its derivative in tau.

    Uses the odd antiderivative F(t) = sign(t) tau (1 - exp(-|t|/tau)).
    """
    with np.errstate(over="ignore", invalid="ignore"):
        el, eh = np.exp(-np.abs(lo) / tau), np.exp(-np.abs(hi) / tau)
        f = np.sign(hi) * tau * (1 - eh) - np.sign(lo) * tau * (1 - el)
        df = np.sign(hi) * ((1 - eh) - np.abs(hi) / tau * eh) - np.sign(lo) * ((1 - el) - np.abs(lo) / tau * el)
    w = hi - lo
    return f / w, df / w


def g2_binned(edges, p):
    """Bin average of g2_curve; ``edges`` is an (n, 2) array of bin limits."""
    a, b, tau1, tau2 = p
    lo, hi = edges[:, 0], edges[:, 1]
    m1, _ = _exp_bin_mean(lo, hi, tau1)
    m2, _ = _exp_bin_mean(lo, hi, tau2)
    return 1.0 - (1.0 + a) * m1 + b * m2


def g2_binned_jac(edges, p):
    a, b, tau1, tau2 = p
    lo, hi = edges[:, 0], edges[:, 1]
    m1, d1 = _exp_bin_mean(lo, hi, tau1)
    m2, d2 = _exp_bin_mean(lo, hi, tau2)
    return np.column_stack([-m1, m2, -(1.0 + a) * d1, b * d2])


def saturation_curve(power, p):
    i_sat, p_sat = p
    return i_sat * power / (power + p_sat)


def saturation_jac(power, p):
    i_sat, p_sat = p
    den = power + p_sat
    return np.column_stack([power / den, -i_sat * power / den**2])


def poisson_curve(k, p):
    (lam,) = p
    lam = max(lam, 1e-300)
    return np.exp(k * np.log(lam) - lam - gammaln(k + 1.0))


def poisson_jac(k, p):
    (lam,) = p
    lam = max(lam, 1e-300)
    return (poisson_curve(k, p) * (k / lam - 1.0))[:, None]


MODELS = {
    "odmr": (lorentzian, lorentzian_jac, ("f0", "fwhm", "contrast", "baseline")),
    "g2": (g2_curve, g2_jac, ("a", "b", "tau1", "tau2")),
    "g2_binned": (g2_binned, g2_binned_jac, ("a", "b", "tau1", "tau2")),
    "saturation": (saturation_curve, saturation_jac, ("i_sat", "p_sat")),
    "poisson": (poisson_curve, poisson_jac, ("lam",)),
}
