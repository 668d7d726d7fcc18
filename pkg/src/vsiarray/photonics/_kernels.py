"""Photon-stream generation and pair counting.

A photon source is a sequential stream indexed by an integer counter: photon
``i`` takes its gap from uniform ``2i`` and its detector from uniform
``2i+1`` of the source's counter RNG. Generation can therefore stop at any
time boundary and resume later with identical results, which is what lets
long HBT runs be correlated chunk by chunk.
"""

import numpy as np

from .._accel import njit
from ..rng import counter_uniform, counter_uniform_array

KIND_RENEWAL = 0  # phase-type gaps (three-level emitter)
KIND_POISSON = 1  # exponential gaps


def fast_threshold(mu, coef):
    """Delay beyond which the fast modes are below double precision.

    For t above this, the faster exponentials contribute less than 1e-17 of
    the slow one, so the root of the survival equation is the slow-mode root.
    """
    rest = float(np.sum(np.abs(coef[1:])))
    if rest == 0.0:
        return 0.0
    return max(np.log(rest / (1e-17 * coef[0])) / (mu[0] - mu[1]), 0.0)


@njit(cache=True)
def _surv(t, m0, m1, m2, c0, c1, c2):
    return c0 * np.exp(m0 * t) + c1 * np.exp(m1 * t) + c2 * np.exp(m2 * t)


@njit(cache=True)
def ph_quantile(u, m0, m1, m2, c0, c1, c2, t_fast):
    """t with c0 e^{m0 t} + c1 e^{m1 t} + c2 e^{m2 t} = u (m0 slowest)."""
    t = np.log(c0 / u) / -m0
    if t >= t_fast:
        return t
    if t < 0.0:
        t = 0.0
    lo = 0.0
    hi = 2.0 * t - 1.0 / m0
    while _surv(hi, m0, m1, m2, c0, c1, c2) > u:
        hi *= 2.0
    if t > hi:
        t = hi
    for _ in range(100):
        e0 = c0 * np.exp(m0 * t)
        e1 = c1 * np.exp(m1 * t)
        e2 = c2 * np.exp(m2 * t)
        g = e0 + e1 + e2 - u
        if g == 0.0:
            break
        f = -(m0 * e0 + m1 * e1 + m2 * e2)
        if g > 0.0:
            lo = t
        else:
            hi = t
        step = t + g / f if f > 0.0 else -1.0
        new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(new - t) <= 1e-12 * max(new, 1.0):
            t = new
            break
        t = new
    return t


@njit(cache=True, inline="always")
def next_gap(key, i, kind, rate, p):
    """Gap before photon ``i``; ``p`` = (m0, m1, m2, c0, c1, c2, t_fast)."""
    u = 1.0 - counter_uniform(key, np.uint64(2 * i))
    if kind == 0:
        return ph_quantile(u, p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    return -np.log(u) / rate


@njit(cache=True, inline="always")
def next_detector(key, i):
    return 1 if counter_uniform(key, np.uint64(2 * i + 1)) < 0.5 else 2


@njit(cache=True)
def advance_source(key, kind, rate, p, t, i, t_stop, out_t, out_d, n0):
    """Append photons with time < t_stop to out_t/out_d starting at n0.

    Returns (n, t, i): the new fill level, the time of the last emitted
    photon and the next counter. Stops early when the buffer is full.
    """
    n = n0
    cap = out_t.size
    while n < cap:
        t_new = t + next_gap(key, i, kind, rate, (p[0], p[1], p[2], p[3], p[4], p[5], p[6]))
        if t_new >= t_stop:
            break
        out_t[n] = t_new
        out_d[n] = next_detector(key, i)
        n += 1
        t = t_new
        i += 1
    return n, t, i


@njit(cache=True)
def pair_histogram(t1, t2, lo_edge, bin_width, nbins, counts):
    """Add every t2 - t1 in [lo_edge, lo_edge + nbins*bin_width) to counts."""
    hi_edge = lo_edge + nbins * bin_width
    start = 0
    n2 = t2.size
    for a in range(t1.size):
        lo = t1[a] + lo_edge
        while start < n2 and t2[start] < lo:
            start += 1
        j = start
        hi = t1[a] + hi_edge
        while j < n2 and t2[j] < hi:
            b = int(np.floor((t2[j] - t1[a] - lo_edge) / bin_width))
            if 0 <= b < nbins:
                counts[b] += 1
            j += 1


@njit(cache=True)
def stream_histogram(keys, kinds, rates, params, t0, i0, t_stop, lo_edge, bin_width, nbins, counts, buf_size):
    """Generate all sources in time order and histogram t2 - t1 on the fly.

    Each pair is counted when its later photon arrives, against a ring buffer
    holding the recent photons of the other detector. ``buf_size`` must be a
    power of two. Returns (n1, n2), or (-1, -1) if a ring buffer overflowed.
    Source states ``t0``/``i0`` are updated in place.
    """
    ns = keys.size
    mask = buf_size - 1
    hi_edge = lo_edge + nbins * bin_width
    back = -lo_edge  # det2 may precede det1 by up to this
    tnext = np.empty(ns)
    dnext = np.empty(ns, dtype=np.int64)
    for s in range(ns):
        tnext[s] = t0[s] + next_gap(keys[s], i0[s], kinds[s], rates[s], params[s])
        dnext[s] = next_detector(keys[s], i0[s])
    buf1 = np.empty(buf_size)
    buf2 = np.empty(buf_size)
    h1 = 0  # index of oldest entry
    e1 = 0  # one past newest entry (both increase monotonically)
    h2 = 0
    e2 = 0
    n1 = 0
    n2 = 0
    while True:
        s = 0
        for k in range(1, ns):
            if tnext[k] < tnext[s]:
                s = k
        t = tnext[s]
        if t >= t_stop:
            break
        d = dnext[s]
        t0[s] = t
        i0[s] += 1
        tnext[s] = t + next_gap(keys[s], i0[s], kinds[s], rates[s], params[s])
        dnext[s] = next_detector(keys[s], i0[s])
        if d == 1:
            n1 += 1
            while h2 < e2 and t - buf2[h2 & mask] > back:
                h2 += 1
            for m in range(h2, e2):
                b = int(np.floor((buf2[m & mask] - t - lo_edge) / bin_width))
                if 0 <= b < nbins:
                    counts[b] += 1
            while h1 < e1 and t - buf1[h1 & mask] > hi_edge:
                h1 += 1
            if e1 - h1 == buf_size:
                return -1, -1
            buf1[e1 & mask] = t
            e1 += 1
        else:
            n2 += 1
            while h1 < e1 and t - buf1[h1 & mask] > hi_edge:
                h1 += 1
            for m in range(h1, e1):
                b = int(np.floor((t - buf1[m & mask] - lo_edge) / bin_width))
                if 0 <= b < nbins:
                    counts[b] += 1
            while h2 < e2 and t - buf2[h2 & mask] > back:
                h2 += 1
            if e2 - h2 == buf_size:
                return -1, -1
            buf2[e2 & mask] = t
            e2 += 1
    return n1, n2


def ph_quantile_array(u, p, tol=1e-12, max_iter=100):
    """Vectorised :func:`ph_quantile`."""
    u = np.asarray(u, dtype=np.float64)
    mu = np.array(p[:3])
    coef = np.array(p[3:6])
    t = np.log(coef[0] / u) / -mu[0]
    slow = np.flatnonzero(t < p[6])
    if slow.size:
        t[slow] = _ph_newton(u[slow], np.maximum(t[slow], 0.0), mu, coef, tol, max_iter)
    return t


def _ph_newton(u, t, mu, coef, tol, max_iter):
    lo = np.zeros_like(t)
    hi = 2.0 * t - 1.0 / mu[0]

    def surv(x):
        e = np.exp(np.multiply.outer(x, mu)) * coef
        return e[:, 0] + e[:, 1] + e[:, 2]

    while True:
        bad = surv(hi) > u
        if not bad.any():
            break
        hi[bad] *= 2.0
    t = np.minimum(t, hi)
    active = np.arange(t.size)
    for _ in range(max_iter):
        if active.size == 0:
            break
        ta = t[active]
        e = np.exp(np.multiply.outer(ta, mu)) * coef
        g = e[:, 0] + e[:, 1] + e[:, 2] - u[active]
        f = -(mu[0] * e[:, 0] + mu[1] * e[:, 1] + mu[2] * e[:, 2])
        pos = g > 0
        lo[active] = np.where(pos, ta, lo[active])
        hi[active] = np.where(pos, hi[active], ta)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(f > 0, ta + g / f, -1.0)
        ok = (lo[active] < step) & (step < hi[active])
        new = np.where(ok, step, 0.5 * (lo[active] + hi[active]))
        new = np.where(g == 0.0, ta, new)
        t[active] = new
        done = (g == 0.0) | (np.abs(new - ta) <= tol * np.maximum(new, 1.0))
        active = active[~done]
    return t


def advance_source_numpy(key, kind, rate, p, t, i, t_stop, out_t, out_d, n0):
    n = n0
    cap = out_t.size
    block = 4096
    while n < cap:
        m = min(block, cap - n)
        idx = np.arange(i, i + m, dtype=np.uint64)
        u = 1.0 - counter_uniform_array(np.full(m, key, dtype=np.uint64), 2 * idx)
        gaps = ph_quantile_array(u, p) if kind == 0 else -np.log(u) / rate
        times = np.cumsum(np.concatenate([[t], gaps]))[1:]
        keep = int(np.searchsorted(times, t_stop, side="left"))
        if keep:
            route = counter_uniform_array(np.full(keep, key, dtype=np.uint64), 2 * idx[:keep] + 1)
            out_t[n : n + keep] = times[:keep]
            out_d[n : n + keep] = np.where(route < 0.5, 1, 2)
            n += keep
            t = float(times[keep - 1])
            i += keep
        if keep < m:
            break
    return n, t, i


def pair_histogram_numpy(t1, t2, lo_edge, bin_width, nbins, counts):
    hi_edge = lo_edge + nbins * bin_width
    start = np.searchsorted(t2, t1 + lo_edge, side="left")
    stop = np.searchsorted(t2, t1 + hi_edge, side="left")
    n_pairs = stop - start
    total = int(n_pairs.sum())
    if total == 0:
        return
    owner = np.repeat(np.arange(t1.size), n_pairs)
    offsets = np.arange(total) - np.repeat(np.cumsum(n_pairs) - n_pairs, n_pairs)
    dt = t2[np.repeat(start, n_pairs) + offsets] - t1[owner]
    b = np.floor((dt - lo_edge) / bin_width).astype(np.int64)
    b = b[(b >= 0) & (b < nbins)]
    counts += np.bincount(b, minlength=nbins)[:nbins]
