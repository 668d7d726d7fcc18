import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from vsiarray.inference import (
    OdmrSpectrum,
    background_correct_g2,
    classify_readouts,
    classify_spot,
    detect_spots,
    fit_g2,
    fit_odmr,
    fit_poisson,
    fit_saturation,
    least_squares_fit,
    yield_report,
    yield_table,
)
from vsiarray.inference.lm import CONVERGED_GRAD
from vsiarray.inference.models import MODELS, g2_binned, g2_curve, lorentzian, saturation_curve
from vsiarray.patterning import Defect, DefectArray, Spot, build_pattern, poisson_pmf, sample_defect_array
from vsiarray.photonics import (
    CorrelationHistogram,
    EmitterModel,
    Optics,
    correlation_edges,
    grid_for_pattern,
    hbt_histogram,
    mix_background,
    render_scan,
)

EM = EmitterModel()
ODMR_TRUTH = np.array([71.22, 17.87, -0.0028, 1.0])


# least-squares engine


def test_lm_exact_start():
    x = np.linspace(0, 3, 20)
    p = np.array([2.0, 0.5])
    res = least_squares_fit(saturation_curve, x, saturation_curve(x, p), p)
    assert res.rss == 0.0
    np.testing.assert_array_equal(res.values, p)
    assert res.converged


def test_lm_linear_closed_form():
    res = least_squares_fit(lambda x, p: p[0] * x, [1.0, 2.0], [2.0, 4.0], [0.3])
    assert res["p0"] == pytest.approx(2.0, abs=1e-12)
    assert res.converged and res.grad_norm <= CONVERGED_GRAD


def test_lm_singular_jacobian():
    # two parameters that only enter as a sum
    res = least_squares_fit(lambda x, p: (p[0] + p[1]) * x, [1.0, 2.0, 3.0], [2.0, 4.0, 6.1], [0.5, 0.5])
    assert not res.converged
    assert "singular_jacobian" in res.flags
    assert np.all(np.isfinite(res.values))
    assert (res.values.sum() * np.array([1, 2, 3]) - [2, 4, 6.1]) @ (res.values.sum() * np.array([1, 2, 3]) - [2, 4, 6.1]) < 0.01


def test_lm_domain():
    with pytest.raises(ValueError):
        least_squares_fit(saturation_curve, [1.0], [1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        least_squares_fit(saturation_curve, [1.0, np.nan], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        least_squares_fit(saturation_curve, [1.0, 2.0], [1.0, 1.0], [1.0, 1.0], sigma=[1.0, 0.0])


def test_lm_lorentzian_coverage():
    # additive noise at 1 % of the contrast amplitude
    f = np.linspace(20, 120, 200)
    truth = np.array([71.22, 17.87, -0.01, 1.0])
    clean = lorentzian(f, truth)
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        y = clean + 0.01 * abs(truth[2]) * rng.standard_normal(f.size)
        res = fit_odmr(OdmrSpectrum(f, y))
        assert np.all(res.sigma >= 0)
        if res.converged:
            assert res.grad_norm <= CONVERGED_GRAD
        hits += bool(np.all(np.abs(res.values - truth) <= 3 * res.sigma))
    assert hits >= 95


def _rand_params(name, rng):
    if name == "odmr":
        return np.array([rng.uniform(50, 90), rng.uniform(5, 30), rng.uniform(-0.01, 0.01), rng.uniform(0.5, 1.5)])
    if name in ("g2", "g2_binned"):
        t1 = rng.uniform(0.5, 10)
        return np.array([rng.uniform(0, 1), rng.uniform(0, 1), t1, rng.uniform(2 * t1, 300)])
    if name == "saturation":
        return np.array([rng.uniform(1, 30), rng.uniform(0.1, 2)])
    return np.array([rng.uniform(0.05, 10)])


def _model_x(name):
    if name == "odmr":
        return np.linspace(30, 110, 41)
    if name == "g2":
        return np.linspace(-200, 200, 81)
    if name == "g2_binned":
        e = correlation_edges(2.0, 100.0)
        return np.column_stack([e[:-1], e[1:]])
    if name == "saturation":
        return np.linspace(0.05, 3.0, 12)
    return np.arange(20, dtype=np.float64)


def _fd_jacobian(model, x, p):
    """Richardson-extrapolated central differences (independent of the package helper)."""
    cols = []
    for j in range(p.size):
        h = 1e-3 * max(abs(p[j]), 1e-2)

        def d(step):
            up, dn = p.copy(), p.copy()
            up[j] += step
            dn[j] -= step
            return (model(x, up) - model(x, dn)) / (2 * step)

        cols.append((4 * d(h / 2) - d(h)) / 3)
    return np.column_stack(cols)


@pytest.mark.parametrize("name", sorted(MODELS))
@given(seed=st.integers(0, 2**32 - 1))
def test_jacobian_matches_finite_differences(name, seed):
    model, jac, names = MODELS[name]
    rng = np.random.default_rng(seed)
    p = _rand_params(name, rng)
    x = _model_x(name)
    ja = jac(x, p)
    jn = _fd_jacobian(model, x, p)
    assert ja.shape == (len(x), len(names))
    scale = np.maximum(np.max(np.abs(ja), axis=0), 1e-300)
    assert np.all(np.abs(ja - jn) <= 1e-6 * scale)


def test_binned_g2_matches_quadrature():
    p = (0.3, 0.33, 3.0, 100.0)
    edges = np.array([[-0.5, 0.5], [0.5, 1.5], [-7.5, -6.5], [2.0, 30.0], [-1.0, 3.0]])
    got = g2_binned(edges, p)
    for (lo, hi), g in zip(edges, got):
        ref = quad(lambda t: g2_curve(np.array([t]), p)[0], lo, hi, points=[0.0] if lo < 0 < hi else None)[0]
        assert g == pytest.approx(ref / (hi - lo), rel=1e-10)


# ODMR


def _odmr(seed, shift=0.0, truth=ODMR_TRUTH, noise=0.1):
    """200 points with additive noise at ``noise`` times the contrast amplitude."""
    f = np.linspace(20, 120, 200) + shift
    clean = lorentzian(f - shift, truth)
    rng = np.random.default_rng(seed)
    return OdmrSpectrum(f, clean + noise * abs(truth[2]) * rng.standard_normal(f.size))


def test_odmr_recovers_truth():
    res = fit_odmr(_odmr(3))
    assert res.converged and not res.flags
    assert np.all(np.abs(res.values - ODMR_TRUTH) <= 3 * res.sigma)


def test_odmr_translation_equivariance():
    a = fit_odmr(_odmr(4))
    b = fit_odmr(_odmr(4, shift=10.0))
    assert b["f0"] - a["f0"] == pytest.approx(10.0, abs=1e-6)
    for name in ("fwhm", "contrast", "baseline"):
        assert b[name] == pytest.approx(a[name], rel=1e-6, abs=1e-12)


def test_odmr_either_sign():
    truth = ODMR_TRUTH * [1, 1, -1, 1]
    res = fit_odmr(_odmr(5, truth=truth))
    assert res["contrast"] > 0
    assert abs(res["f0"] - 71.22) < 3 * res.sigma_of("f0")


def test_odmr_flat_flagged():
    rng = np.random.default_rng(6)
    f = np.linspace(20, 120, 200)
    res = fit_odmr(OdmrSpectrum(f, 1.0 + 2e-4 * rng.standard_normal(f.size)))
    assert "no_resonance" in res.flags
    assert abs(res["contrast"]) < 3 * res.sigma_of("contrast") or not np.isfinite(res.sigma_of("contrast"))


def test_odmr_spectrum_invariants():
    with pytest.raises(ValueError):
        OdmrSpectrum(np.array([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(ValueError):
        OdmrSpectrum(np.array([1.0, 2.0]), np.zeros(3))


# g2 correction and fit


def test_background_correction_examples():
    c = np.linspace(0, 2, 11)
    np.testing.assert_array_equal(background_correct_g2(c, 6.0, 0.0), c)
    np.testing.assert_allclose(background_correct_g2(np.ones(5), 6.0, 2.0), 1.0, atol=1e-15)
    # 0.4544 is 1 - rho^2 + rho^2 * 0.03 = 0.454375 rounded to four places
    assert round(float(background_correct_g2(0.4544, 6.0, 2.0)), 4) == 0.0300
    assert background_correct_g2(0.454375, 6.0, 2.0) == pytest.approx(0.03, abs=1e-15)
    with pytest.raises(ValueError):
        background_correct_g2(c, 0.0, 2.0)
    with pytest.raises(ValueError):
        background_correct_g2(c, 6.0, -1.0)


def test_correction_inverts_mixing_at_075():
    tau = np.linspace(-500, 500, 100001)
    g = EM.g2(tau)
    back = background_correct_g2(mix_background(g, 0.75), 6.0, 2.0)
    assert np.max(np.abs(back - g)) < 1e-12


@given(st.floats(0.1, 100.0), st.floats(0.0, 100.0))
def test_correction_inverts_mixing(s, b):
    tau = np.linspace(-300, 300, 601)
    g = EM.g2(tau)
    rho = s / (s + b)
    back = background_correct_g2(mix_background(g, rho), s, b)
    # dividing by rho^2 amplifies the rounding of the mixed curve
    tol = 16 * np.finfo(float).eps * (1 + 1 / rho**2) * np.max(np.abs(g))
    assert np.max(np.abs(back - g)) <= tol


def _hist_from_curve(c, bin_width=1.0, max_lag=200.0):
    e = correlation_edges(bin_width, max_lag)
    n = e.size - 1
    c = np.broadcast_to(c, (n,)).astype(float)
    norm = 1000.0
    return CorrelationHistogram(e, np.rint(c * norm).astype(np.int64), c, bin_width, 1.0, int(norm / bin_width * 1e9), 1)


def test_fit_g2_flat_flagged():
    res = fit_g2(_hist_from_curve(1.0))
    assert "not_antibunched" in res.flags
    assert res["g2_at_zero"] == pytest.approx(1.0, abs=0.05)


def test_fit_g2_noiseless_model():
    e = correlation_edges(1.0, 500.0)
    c = g2_binned(np.column_stack([e[:-1], e[1:]]), (EM.a, EM.b, EM.tau1, EM.tau2))
    res = fit_g2(_hist_from_curve(c, max_lag=500.0))
    assert res["g2_at_zero"] == pytest.approx(0.03, abs=1e-6)
    assert res["tau1"] == pytest.approx(3.0, rel=1e-5)


def test_fit_g2_simulated_single():
    h = hbt_histogram(1, 6.0, 0.0, EM, 2000.0, seed=51, bin_width=1.0, max_lag=500.0)
    res = fit_g2(h)
    assert res["g2_at_zero"] < 0.5
    assert abs(res["g2_at_zero"] - 0.03) < 3 * res.sigma_of("g2_at_zero")
    assert "not_antibunched" not in res.flags


def test_fit_g2_correction_consistency():
    pure = fit_g2(hbt_histogram(1, 6.0, 0.0, EM, 2000.0, seed=52, bin_width=1.0, max_lag=500.0))
    mixed_h = hbt_histogram(1, 6.0, 2.0, EM, 2000.0, seed=53, bin_width=1.0, max_lag=500.0)
    mixed = fit_g2(mixed_h, signal=6.0, background=2.0, correct=True)
    raw = fit_g2(mixed_h)
    sig = math.hypot(pure.sigma_of("g2_at_zero"), mixed.sigma_of("g2_at_zero"))
    assert abs(mixed["g2_at_zero"] - pure["g2_at_zero"]) < 3 * sig
    # the uncorrected fit sees the background-raised dip
    assert raw["g2_at_zero"] == pytest.approx(1 - 0.5625 + 0.5625 * 0.03, abs=3 * raw.sigma_of("g2_at_zero"))
    with pytest.raises(ValueError):
        fit_g2(mixed_h, correct=True)


# saturation


POWERS = np.array([0.05, 0.1, 0.2, 0.35, 0.5, 0.8, 1.2, 2.0])


def test_saturation_noiseless_exact():
    res = fit_saturation(POWERS, saturation_curve(POWERS, (14.86, 0.47)))
    assert res["i_sat"] == pytest.approx(14.86, rel=5e-7)
    assert res["p_sat"] == pytest.approx(0.47, rel=5e-7)


@given(st.floats(0.01, 100.0))
def test_saturation_scale_equivariance(k):
    y = saturation_curve(POWERS, (14.86, 0.47)) * (1 + 0.03 * np.sin(np.arange(8)))
    a = fit_saturation(POWERS, y)
    b = fit_saturation(POWERS, k * y)
    assert b["i_sat"] == pytest.approx(k * a["i_sat"], rel=1e-7)
    assert b["p_sat"] == pytest.approx(a["p_sat"], rel=1e-7)


def test_saturation_coverage():
    clean = saturation_curve(POWERS, (14.86, 0.47))
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        y = clean * (1 + 0.05 * rng.standard_normal(POWERS.size))
        res = fit_saturation(POWERS, y, sigma=0.05 * clean)
        hits += bool(np.all(np.abs(res.values - [14.86, 0.47]) <= 3 * res.sigma))
    assert hits >= 95


def test_saturation_linear_regime_flagged():
    p = np.array([0.001, 0.002, 0.003, 0.004, 0.005])
    rng = np.random.default_rng(1)
    y = saturation_curve(p, (14.86, 0.47)) * (1 + 0.05 * rng.standard_normal(p.size))
    res = fit_saturation(p, y)
    assert "linear_regime" in res.flags
    with pytest.raises(ValueError):
        fit_saturation(p[:2], y[:2])


# classification


@pytest.mark.parametrize(
    "intensity,g2,n",
    [(6.0, 0.03, 1), (13.5, 0.637, 2), (23.0, None, 3), (46.0, None, 6), (0.0, None, 0), (3.99, None, 0)],
)
def test_classify_examples(intensity, g2, n):
    got = classify_spot(intensity, g2)
    assert got.n == n and not got.conflict


def test_classify_boundaries_and_conflicts():
    assert [classify_spot(v).n for v in (4.0, 8.0, 16.0, 20.0, 27.99)] == [1, 2, 3, 3, 3]
    assert classify_spot(6.0, 0.5).conflict
    assert classify_spot(13.5, 0.1).conflict
    assert classify_spot(13.5, 0.325).n == 2 and not classify_spot(13.5, 0.325).conflict
    assert classify_spot(30.0, 0.6).conflict
    assert not classify_spot(30.0, 0.8).conflict
    with pytest.raises(ValueError):
        classify_spot(-1.0)
    with pytest.raises(ValueError):
        classify_spot(1.0, unit=0.0)


@given(st.floats(0, 1e3), st.floats(0, 1e3))
def test_classify_monotone(a, b):
    lo, hi = sorted((a, b))
    assert classify_spot(lo).n <= classify_spot(hi).n


@given(st.floats(0, 1e3), st.integers(-20, 20))
def test_classify_scale_invariant(intensity, e):
    # power-of-two factors keep intensity/unit bit-identical
    k = 2.0**e
    assert classify_spot(intensity * k, unit=8.0 * k).n == classify_spot(intensity).n


# Poisson and yield


def test_fit_poisson_examples():
    assert fit_poisson(np.zeros(100, int))["lam"] == 0.0
    res = fit_poisson(np.full(100, 5))
    assert res["lam"] == 5.0 and res.sigma_of("lam") == pytest.approx(math.sqrt(5 / 100))
    k = np.random.default_rng(0).poisson(1.39, 100)
    res = fit_poisson(k)
    assert res.sigma_of("lam") == pytest.approx(math.sqrt(k.mean() / 100))
    assert math.sqrt(1.39 / 100) == pytest.approx(0.12, abs=0.005)
    assert "lam_ls" in res.extra and res.extra["histogram"] == np.bincount(k).tolist()
    with pytest.raises(ValueError):
        fit_poisson([])
    with pytest.raises(ValueError):
        fit_poisson([1, -1])


@given(st.lists(st.integers(0, 30), min_size=1, max_size=300))
def test_fit_poisson_is_sample_mean(k):
    assert fit_poisson(k, least_squares=False)["lam"] == np.mean(k)


def test_fit_poisson_least_squares_mode():
    k = np.random.default_rng(2).poisson(3.0, 2000)
    res = fit_poisson(k)
    assert res.extra["lam_ls"] == pytest.approx(res["lam"], abs=4 * res.sigma_of("lam"))


def _counts_with_mean(total, n):
    k = np.zeros(n, int)
    k[: total % n] += 1
    k += total // n
    return k


def test_yield_report_examples():
    r = yield_report(_counts_with_mean(139, 100), 20)
    assert r.lam == pytest.approx(1.39, abs=1e-12)
    assert r.eta == pytest.approx(0.0695, abs=1e-12)
    assert r.single_rate == pytest.approx(1.39 * math.exp(-1.39), rel=1e-12)
    assert round(100 * r.single_rate, 1) == 34.6
    assert yield_report(_counts_with_mean(2721, 500), 100).eta == pytest.approx(0.05442, abs=1e-12)
    z = yield_report(np.zeros(10, int), 40)
    assert z.eta == 0.0 and z.single_rate == 0.0
    with pytest.raises(ValueError):
        yield_report([1, 2], 0.0)
    with pytest.raises(ValueError):
        yield_report([30, 30], 20)
    assert "lambda" in yield_table([r]) and r.row() in yield_table([r])


@given(st.lists(st.integers(0, 20), min_size=1, max_size=200), st.floats(20.0, 1000.0))
def test_yield_report_ranges(k, dose):
    r = yield_report(k, dose)
    assert 0 <= r.eta <= 1 and 0 <= r.single_rate <= 1 and r.eta_sigma >= 0
    assert r.to_dict()["n_spots"] == len(k)


# spot readout


def _one_per_spot_array(pattern, k_of):
    spots = []
    for r, c, x, y in pattern.spots():
        spots.append(Spot(r, c, float(x), float(y), tuple(Defect(0.0, 0.0, 100.0, 1.0) for _ in range(k_of(r, c)))))
    return DefectArray(pattern, tuple(spots), 20.0, 0.07, 0)


def test_detect_spots_round_trip():
    pattern = build_pattern(4, 4, 3.0)
    arr = _one_per_spot_array(pattern, lambda r, c: (r + c) % 4)
    img = render_scan(arr, Optics(), 0.5, EM, grid_for_pattern(pattern), seed=8)
    readouts = detect_spots(img, pattern)
    assert len(readouts) == 16
    truth = {(s.row, s.col): s.k for s in arr.spots}
    for ro in readouts:
        expect = truth[ro.spot_id] * EM.intensity(0.5)
        assert abs(ro.raw_intensity - expect) < 3 * ro.sigma + 0.05
        assert ro.intensity >= 0
    assert [ro.n for ro in classify_readouts(readouts)] == [truth[ro.spot_id] for ro in readouts]


def test_detect_spots_empty_image():
    pattern = build_pattern(3, 3, 3.0)
    img = render_scan(_one_per_spot_array(pattern, lambda r, c: 0), Optics(), 0.5, EM, grid_for_pattern(pattern), seed=9)
    for ro in detect_spots(img, pattern):
        assert abs(ro.raw_intensity) < 3 * ro.sigma + 0.05
        assert classify_spot(ro.intensity).n == 0


def test_detect_spots_background_invariance():
    pattern = build_pattern(3, 3, 3.0)
    arr = _one_per_spot_array(pattern, lambda r, c: 1 + (r * 3 + c) % 3)
    grid = grid_for_pattern(pattern)
    dark = detect_spots(render_scan(arr, Optics(0.5, 0.0), 0.5, EM, grid, seed=10), pattern)
    lit = detect_spots(render_scan(arr, Optics(0.5, 2.0), 0.5, EM, grid, seed=10), pattern)
    for a, b in zip(dark, lit):
        assert abs(a.raw_intensity - b.raw_intensity) < 3 * math.hypot(a.sigma, b.sigma) + 0.05


def test_detect_spots_off_image_warns():
    pattern = build_pattern(2, 2, 3.0)
    arr = _one_per_spot_array(pattern, lambda r, c: 1)
    img = render_scan(arr, Optics(), 0.5, EM, grid_for_pattern(build_pattern(1, 1, 3.0)), seed=11)
    with pytest.warns(UserWarning, match="outside the image"):
        readouts = detect_spots(img, pattern)
    assert [ro.spot_id for ro in readouts] == [(0, 0)]


def test_end_to_end_yield_bias(small_profile):
    pattern = build_pattern(100, 100, 3.0)
    eta = 0.0695
    arr = sample_defect_array(pattern, 20, eta, small_profile, seed=60)
    img = render_scan(arr, Optics(), 0.5, EM, grid_for_pattern(pattern), seed=61)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        readouts = detect_spots(img, pattern, straggle_nm=small_profile.lateral_straggle_axis)
    n = [classify_spot(ro.intensity).n for ro in readouts]
    rep = yield_report(n, 20)
    assert abs(rep.eta - eta) / eta < 0.02
    assert abs(rep.single_rate - poisson_pmf(1, 20 * eta)) < 0.03
