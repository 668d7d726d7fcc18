"""Seed derivation and a counter-based uniform generator.

Every random stream in the package hangs off one master seed through a named
path such as ``transport/ion/17`` or ``array/spot/3,4``. The derived 64-bit
key depends only on (master seed, path), so results do not depend on the
order in which streams are consumed or on how work is scheduled.

The transport kernels draw uniforms from a SplitMix64 sequence indexed
directly by a counter, which lets the numba kernel and the vectorised numpy
kernel produce the same numbers for the same (ion, step, slot).
"""

import hashlib

import numpy as np

from ._accel import njit

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def derive_seed(master, path):
    """Return the 64-bit key for stream ``path`` under ``master``."""
    master = int(master) & MASK64
    digest = hashlib.blake2b(f"{master}:{path}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_keys(master, prefix, n):
    """Keys for ``prefix/0`` .. ``prefix/n-1`` as a uint64 array."""
    return np.array([derive_seed(master, f"{prefix}/{i}") for i in range(n)], dtype=np.uint64)


def generator(master, path):
    """A numpy ``Generator`` for the named stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, path)))


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def counter_uniform(key, counter):
    """Uniform double in [0, 1) at position ``counter`` of stream ``key``."""
    z = mix64(key + (counter + np.uint64(1)) * GOLDEN_GAMMA)
    return float(z >> _S11) * _INV53


def counter_uniform_array(keys, counters):
    """Vectorised :func:`counter_uniform` (pure numpy, wraps modulo 2**64)."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = keys + (counters + np.uint64(1)) * GOLDEN_GAMMA
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        z = z ^ (z >> _S31)
    return (z >> _S11).astype(np.float64) * _INV53
