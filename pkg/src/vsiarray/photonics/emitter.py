"""Single-emitter optical response: saturation curve, g2 shape, and the
three-level rate model used to generate photon streams.

Level 1 is the ground state, 2 the optically excited state and 3 the
metastable shelving state. Transitions: 1->2 (k12, pumping), 2->1 (k21,
radiative), 2->3 (k23, intersystem crossing), 3->1 (k31, de-shelving).

For this chain the normalised excited-state population after a photon
emission is a biexponential,

    g3(t) = 1 - (1 + A) exp(-l1 t) + A exp(-l2 t),   g3(0) = 0,

and the rates are recovered from (l1, l2, A) once the radiative rate k21 is
fixed:

    k31 = l1 l2 / (l1 + A (l1 - l2))
    k12 k23 = k31 (k31 + A (l1 - l2) - l2)
    k12 + k23 = l1 + l2 - k21 - k31

so k12 and k23 are the two roots of a quadratic (k12 the larger, i.e. the
emitter is driven near saturation rather than shelving-limited).

A non-zero g2(0) = b - a is reproduced by adding a Poissonian fraction q of
the emitter's photons that is uncorrelated with the three-level stream. With
(1-q)^2 = 1 - (b - a) and A = b / (1-q)^2 the mixture has exactly the shape
1 - (1+a) exp(-|t|/tau1) + b exp(-|t|/tau2).
"""

from dataclasses import dataclass, asdict

import numpy as np


def saturation_intensity(power, i_sat, p_sat):
    """Count rate I_S / (1 + P_S / P) in the units of ``i_sat``; 0 at P = 0."""
    power = np.asarray(power, dtype=np.float64)
    if np.any(power < 0):
        raise ValueError("power must be non-negative")
    with np.errstate(divide="ignore"):
        out = np.where(power > 0, i_sat * power / (power + p_sat), 0.0)
    return float(out) if out.ndim == 0 else out


def g2_model(tau, a, b, tau1, tau2):
    """1 - (1+a) exp(-|tau|/tau1) + b exp(-|tau|/tau2)."""
    if not (tau1 > 0 and tau2 > 0):
        raise ValueError("tau1 and tau2 must be positive")
    t = np.abs(np.asarray(tau, dtype=np.float64))
    out = 1.0 - (1.0 + a) * np.exp(-t / tau1) + b * np.exp(-t / tau2)
    return float(out) if out.ndim == 0 else out


def mix_background(g2, rho):
    """As-measured correlation of a source with signal fraction ``rho``."""
    return 1.0 - rho**2 + rho**2 * np.asarray(g2, dtype=np.float64)


@dataclass(frozen=True)
class EmitterModel:
    i_sat: float = 14.86  # kcps
    p_sat: float = 0.47  # mW
    a: float = 0.3
    b: float = 0.33
    tau1: float = 3.0  # ns
    tau2: float = 100.0  # ns
    radiative_lifetime: float = 6.0  # ns

    def __post_init__(self):
        if not (self.i_sat > 0 and self.p_sat > 0):
            raise ValueError("saturation intensity and power must be positive")
        if not (self.tau1 > 0 and self.tau2 > 0 and self.radiative_lifetime > 0):
            raise ValueError("time constants must be positive")
        if self.a < 0 or self.b < 0:
            raise ValueError("a and b must be non-negative")
        if not self.tau1 < self.tau2:
            raise ValueError("tau1 must be shorter than tau2")
        if self.b - self.a > 1:
            raise ValueError("g2(0) = b - a must not exceed 1")

    @property
    def g2_zero(self):
        return self.b - self.a

    def intensity(self, power):
        return saturation_intensity(power, self.i_sat, self.p_sat)

    def g2(self, tau):
        return g2_model(tau, self.a, self.b, self.tau1, self.tau2)

    @property
    def uncorrelated_fraction(self):
        return 1.0 - np.sqrt(1.0 - self.g2_zero)

    def rates(self):
        """Return ThreeLevelRates consistent with (a, b, tau1, tau2)."""
        return solve_rates(self.a, self.b, self.tau1, self.tau2, self.radiative_lifetime)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class ThreeLevelRates:
    k12: float
    k21: float
    k23: float
    k31: float  # all 1/ns

    def generator(self):
        """Continuous-time generator Q (rows sum to zero), states 1, 2, 3."""
        q = np.array(
            [
                [-self.k12, self.k12, 0.0],
                [self.k21, -(self.k21 + self.k23), self.k23],
                [self.k31, 0.0, -self.k31],
            ]
        )
        return q

    def stationary(self):
        p2 = 1.0 / (1.0 + (self.k21 + self.k23) / self.k12 + self.k23 / self.k31)
        p1 = p2 * (self.k21 + self.k23) / self.k12
        p3 = p2 * self.k23 / self.k31
        return np.array([p1, p2, p3])

    @property
    def emission_rate(self):
        """Photons per ns emitted in steady state."""
        return self.k21 * self.stationary()[1]


def solve_rates(a, b, tau1, tau2, radiative_lifetime):
    one_minus_q2 = 1.0 - (b - a)
    amp = b / one_minus_q2
    l1, l2 = 1.0 / tau1, 1.0 / tau2
    k21 = 1.0 / radiative_lifetime
    k31 = l1 * l2 / (l1 + amp * (l1 - l2))
    prod = k31 * (k31 + amp * (l1 - l2) - l2)
    total = l1 + l2 - k21 - k31
    disc = total * total - 4.0 * prod
    if total <= 0 or prod < 0 or disc < 0:
        raise ValueError(
            "no three-level rates match these g2 parameters; "
            "shorten tau1 or lengthen the radiative lifetime"
        )
    root = np.sqrt(disc)
    k12 = 0.5 * (total + root)
    k23 = 0.5 * (total - root)
    return ThreeLevelRates(float(k12), float(k21), float(k23), float(k31))
