"""Two-detector photon timestamps and their cross-correlation."""

import csv
from dataclasses import dataclass

import numpy as np

from .. import _accel
from ..rng import derive_seed
from . import _kernels as _k
from .emitter import EmitterModel

KCPS_TO_PER_NS = 1e-6


@dataclass(frozen=True)
class PhotonTrace:
    det1: np.ndarray  # ns, sorted
    det2: np.ndarray  # ns, sorted
    duration_s: float
    signal_kcps: float
    background_kcps: float
    n_emitters: int = 0
    seed: int = 0

    @property
    def duration_ns(self):
        return self.duration_s * 1e9

    @property
    def total_rate_kcps(self):
        return (self.det1.size + self.det2.size) / self.duration_s * 1e-3

    def to_csv(self, path):
        det = np.concatenate([np.ones(self.det1.size, np.int8), np.full(self.det2.size, 2, np.int8)])
        ts = np.concatenate([self.det1, self.det2])
        order = np.lexsort((det, ts))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["detector", "timestamp_ns"])
            w.writerows(zip(det[order].tolist(), (format(t, ".6f") for t in ts[order])))

    @classmethod
    def from_csv(cls, path, duration_s=None, signal_kcps=0.0, background_kcps=0.0):
        data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
        det = data["detector"].astype(int)
        ts = data["timestamp_ns"].astype(np.float64)
        if duration_s is None:
            duration_s = float(ts.max()) * 1e-9 if ts.size else 0.0
        return cls(np.sort(ts[det == 1]), np.sort(ts[det == 2]), duration_s, signal_kcps, background_kcps)


class PhaseType:
    """Time from a photon detection (system back in the ground state) to the
    next detected photon of the three-level emitter.

    Undetected emissions (probability 1 - eta) return the system to the
    ground state and continue the cycle; detected ones absorb. The survival
    function is a sum of exponentials from the eigendecomposition of the
    sub-generator, inverted numerically.
    """

    def __init__(self, rates, eta):
        k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
        t = np.array(
            [
                [-k12, k12, 0.0],
                [(1.0 - eta) * k21, -(k21 + k23), k23],
                [k31, 0.0, -k31],
            ]
        )
        mu, v = np.linalg.eig(t)
        coef = v[0, :] * np.linalg.solve(v, np.ones(3))
        if np.max(np.abs(mu.imag)) > 1e-12 * np.max(np.abs(mu.real)):
            raise ValueError("oscillatory emitter dynamics are not supported")
        order = np.argsort(-mu.real)
        self.mu = np.ascontiguousarray(mu.real[order])
        self.coef = np.ascontiguousarray(coef.real[order])
        self.exit_rate = eta * k21

    def survival(self, t):
        return np.exp(np.multiply.outer(t, self.mu)) @ self.coef

    def density(self, t):
        return np.exp(np.multiply.outer(t, self.mu)) @ (-self.mu * self.coef)

    @property
    def params(self):
        """(m0, m1, m2, c0, c1, c2, t_fast) as used by the kernels."""
        return np.concatenate([self.mu, self.coef, [_k.fast_threshold(self.mu, self.coef)]])

    def sample(self, u):
        """Solve survival(t) = u for each u in (0, 1]."""
        return _k.ph_quantile_array(u, self.params)

    @property
    def mean(self):
        return float(np.sum(-self.coef / self.mu))


class _Source:
    def __init__(self, key, kind, rate=0.0, params=None, t0=0.0):
        self.key = np.uint64(key)
        self.kind = kind
        self.rate = float(rate)  # per ns, also used to size buffers
        self.params = params if params is not None else np.zeros(7)
        self.t = float(t0)
        self.i = 0


def _resolve_backend(backend):
    backend = backend or _accel.backend()
    if backend == "numba" and not _accel.USE_NUMBA:
        raise ValueError("numba backend requested but disabled")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def _advance(src, t_stop, backend):
    """All photons of ``src`` before ``t_stop``; advances the source state."""
    fn = _k.advance_source if backend == "numba" else _k.advance_source_numpy
    span = max(t_stop - src.t, 0.0)
    cap = int(span * src.rate * 1.2) + 1024
    times, dets = [], []
    while True:
        out_t = np.empty(cap)
        out_d = np.empty(cap, dtype=np.int8)
        n, t, i = fn(src.key, src.kind, src.rate, src.params, src.t, src.i, t_stop, out_t, out_d, 0)
        src.t, src.i = float(t), int(i)
        times.append(out_t[:n])
        dets.append(out_d[:n])
        if n < cap:
            break
    return np.concatenate(times), np.concatenate(dets)


def _build_sources(n_emitters, signal_kcps, background_kcps, emitter, seed, backend):
    if n_emitters < 0 or signal_kcps < 0 or background_kcps < 0:
        raise ValueError("emitter count and rates must be non-negative")
    emitter = emitter or EmitterModel()
    sources, burn = [], 0.0
    if n_emitters and signal_kcps > 0:
        rates = emitter.rates()
        q = emitter.uncorrelated_fraction
        s_ns = signal_kcps * KCPS_TO_PER_NS
        eta = (1.0 - q) * s_ns / rates.emission_rate
        if eta > 1:
            raise ValueError("signal rate exceeds the emitter's photon flux")
        ph = PhaseType(rates, eta)
        # the three-level chain forgets its initial state within a few tau2
        burn = 50.0 * (emitter.tau2 + 1.0 / rates.k31)
        for j in range(n_emitters):
            key = derive_seed(seed, f"photon/emitter/{j}")
            sources.append(_Source(key, _k.KIND_RENEWAL, (1.0 - q) * s_ns, ph.params, -burn))
            if q > 0:
                key = derive_seed(seed, f"photon/emitter/{j}/uncorrelated")
                sources.append(_Source(key, _k.KIND_POISSON, q * s_ns))
    if background_kcps > 0:
        sources.append(_Source(derive_seed(seed, "photon/background"), _k.KIND_POISSON, background_kcps * KCPS_TO_PER_NS))
    for src in sources:
        if src.t < 0:
            _advance(src, 0.0, backend)  # burn-in photons are dropped
    return sources


def _merge(parts):
    times = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    dets = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int8)
    order = np.argsort(times, kind="stable")
    times, dets = times[order], dets[order]
    return times[dets == 1], times[dets == 2]


def simulate_photon_trace(n_emitters, signal_kcps, background_kcps, emitter, duration_s, seed, backend=None):
    """Timestamps (ns) on two detectors behind a 50:50 splitter.

    ``signal_kcps`` is the detected rate of each emitter. Each emitter is a
    renewal process of three-level photons plus a small Poissonian part that
    sets g2(0); background is Poissonian. Emitter ``j`` draws from stream
    ``photon/emitter/<j>``, background from ``photon/background``.
    """
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    backend = _resolve_backend(backend)
    sources = _build_sources(n_emitters, signal_kcps, background_kcps, emitter, seed, backend)
    stop = duration_s * 1e9
    d1, d2 = _merge([_advance(s, stop, backend) for s in sources])
    return PhotonTrace(d1, d2, float(duration_s), n_emitters * signal_kcps, float(background_kcps), n_emitters, int(seed))


@dataclass(frozen=True)
class CorrelationHistogram:
    edges: np.ndarray  # ns
    counts: np.ndarray
    c_n: np.ndarray
    bin_width: float
    duration_s: float
    n1: int
    n2: int

    @property
    def tau(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def expected_uncorrelated(self):
        """Coincidences per bin for two uncorrelated streams."""
        return self.n1 * self.n2 * self.bin_width / (self.duration_s * 1e9)

    @property
    def zero_bin(self):
        return int(np.argmin(np.abs(self.tau)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau_ns", "counts", "c_n"])
            for t, c, g in zip(self.tau, self.counts, self.c_n):
                w.writerow([format(t, ".6g"), int(c), format(g, ".10g")])

    @classmethod
    def from_csv(cls, path):
        data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
        tau = data["tau_ns"]
        width = float(np.median(np.diff(tau))) if tau.size > 1 else 1.0
        edges = np.concatenate([tau - 0.5 * width, [tau[-1] + 0.5 * width]])
        counts = data["counts"].astype(np.int64)
        c_n = data["c_n"]
        # recover the normalisation constant from any populated bin
        nz = np.flatnonzero(counts > 0)
        norm = counts[nz[0]] / c_n[nz[0]] if nz.size else 1.0
        return cls(edges, counts, c_n, width, 1.0, int(round(norm / width * 1e9)), 1)


def correlation_edges(bin_width, max_lag):
    """Symmetric bin edges with a bin centred on zero delay."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    if max_lag < bin_width:
        raise ValueError("max lag must be at least one bin width")
    half = int(np.floor(max_lag / bin_width + 1e-9))
    return (np.arange(-half, half + 2) - 0.5) * bin_width


def correlate(trace, bin_width, max_lag, backend=None):
    """Histogram of t2 - t1 over all detector pairs within +-max_lag.

    Normalised by n1*n2*bin_width/duration so uncorrelated streams give 1.
    """
    edges = correlation_edges(bin_width, max_lag)
    t1, t2 = trace.det1, trace.det2
    if t1.size == 0 or t2.size == 0:
        raise ValueError("both detectors need at least one photon")
    nbins = edges.size - 1
    counts = np.zeros(nbins, dtype=np.int64)
    fn = _k.pair_histogram if _resolve_backend(backend) == "numba" else _k.pair_histogram_numpy
    fn(np.ascontiguousarray(t1), np.ascontiguousarray(t2), float(edges[0]), float(bin_width), nbins, counts)
    return _histogram(edges, counts, bin_width, trace.duration_s, t1.size, t2.size)


def _histogram(edges, counts, bin_width, duration_s, n1, n2):
    norm = n1 * n2 * bin_width / (duration_s * 1e9)
    return CorrelationHistogram(edges, counts, counts / norm, float(bin_width), float(duration_s), int(n1), int(n2))


def hbt_histogram(
    n_emitters, signal_kcps, background_kcps, emitter, duration_s, seed, bin_width, max_lag, chunk_s=1.0, backend=None
):
    """correlate(simulate_photon_trace(...)) without holding the whole trace.

    The numba path merges the sources photon by photon and pairs each new
    photon with a ring buffer of recent photons on the other detector. The
    numpy path generates time chunks and pairs each chunk's detector-1
    photons with detector-2 photons of the neighbouring chunks. Both give the
    same pairs as the one-shot computation.
    """
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    backend = _resolve_backend(backend)
    edges = correlation_edges(bin_width, max_lag)
    nbins = edges.size - 1
    stop = duration_s * 1e9
    chunk = max(chunk_s * 1e9, 2.0 * abs(edges[0]), 2.0 * edges[-1])
    sources = _build_sources(n_emitters, signal_kcps, background_kcps, emitter, seed, backend)
    counts = np.zeros(nbins, dtype=np.int64)
    if backend == "numba" and sources:
        n1, n2 = _stream(sources, stop, edges, bin_width, nbins, counts)
    else:
        n1, n2 = _chunked(sources, stop, chunk, edges, bin_width, nbins, counts, backend)
    if n1 == 0 or n2 == 0:
        raise ValueError("both detectors need at least one photon")
    return _histogram(edges, counts, bin_width, duration_s, n1, n2)


def _stream(sources, stop, edges, bin_width, nbins, counts):
    keys = np.array([s.key for s in sources], dtype=np.uint64)
    kinds = np.array([s.kind for s in sources], dtype=np.int64)
    rates = np.array([s.rate for s in sources])
    params = np.array([s.params for s in sources])
    t0 = np.array([s.t for s in sources])
    i0 = np.array([s.i for s in sources], dtype=np.int64)
    window = (edges[-1] - edges[0]) * 1e-9 * max(sum(s.rate for s in sources) * 1e9, 1.0)
    buf = 1 << int(np.ceil(np.log2(64 + 20 * window)))
    while True:
        work = counts.copy()
        n1, n2 = _k.stream_histogram(
            keys, kinds, rates, params, t0.copy(), i0.copy(), stop, float(edges[0]), float(bin_width), nbins, work, buf
        )
        if n1 >= 0:
            counts[:] = work
            return int(n1), int(n2)
        buf *= 4


def _chunked(sources, stop, chunk, edges, bin_width, nbins, counts, backend):
    fn = _k.pair_histogram if backend == "numba" else _k.pair_histogram_numpy
    bounds = list(np.arange(chunk, stop, chunk)) + [stop]
    n1 = n2 = 0
    empty = np.empty(0)

    def gen(t_stop):
        return _merge([_advance(s, t_stop, backend) for s in sources])

    prev2 = empty
    cur1, cur2 = gen(bounds[0])
    for c in range(len(bounds)):
        nxt1, nxt2 = gen(bounds[c + 1]) if c + 1 < len(bounds) else (empty, empty)
        window = np.concatenate([prev2, cur2, nxt2])
        fn(cur1, window, float(edges[0]), float(bin_width), nbins, counts)
        n1 += cur1.size
        n2 += cur2.size
        prev2, cur1, cur2 = cur2, nxt1, nxt2
    return n1, n2
