from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import BatterySpec
from ..errors import ModelError

# Below this |delta| the symmetric (delta = 0) formulas are used verbatim.
DELTA_ZERO = 1e-8


@dataclass(frozen=True)
class SpatialParams:
    """Reaction ``kappa``, diffusion ``mu`` and migration ``rho`` on ``[0, ell]``.

    The drift of the underlying reflected Brownian motion is set by
    ``delta = mu - rho``; ``ell = (T - N) / N`` comes from the battery.
    """

    kappa: float
    mu: float
    rho: float
    battery: BatterySpec

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ModelError("reaction parameter kappa must be positive")
        if not (np.isfinite(self.mu) and np.isfinite(self.rho)):
            raise ModelError("mu and rho must be finite")
        if not self.battery.ell > 0:
            raise ModelError("spatial model needs ell = (T - N) / N > 0, i.e. T > N")
        if abs(self.delta) > 300:
            raise ModelError("|mu - rho| above 300 overflows the stationary density")

    @property
    def delta(self) -> float:
        return float(self.mu - self.rho)

    @property
    def delta_eff(self) -> float:
        """``delta`` with values below :data:`DELTA_ZERO` snapped to zero."""
        d = self.delta
        return 0.0 if abs(d) < DELTA_ZERO else d

    @property
    def ell(self) -> float:
        return self.battery.ell

    @property
    def N(self) -> float:
        return self.battery.N

    @property
    def omega(self) -> float:
        return omega(self.delta_eff)


def omega(delta: float) -> float:
    """``2 delta / (1 - exp(-2 delta))`` with the continuous value 1 at zero."""
    if delta == 0.0:
        return 1.0
    return 2.0 * delta / (-math.expm1(-2.0 * delta))


def log_sinhc(delta: float) -> float:
    """``ln(sinh(delta) / delta)``, accurate near zero."""
    d2 = delta * delta
    if abs(delta) < 1e-2:
        return d2 / 6.0 - d2 * d2 / 180.0 + d2 ** 3 / 2835.0
    return math.log(math.sinh(delta) / delta)


def migration_offset(delta: float, z):
    """``(omega e^{-2 delta z} - 1) / delta``; tends to ``1 - 2 z`` as delta -> 0.

    Computed as ``expm1(g) / delta`` with ``g = delta (1 - 2z) - ln(sinh delta / delta)``
    to avoid the cancellation in the naive quotient.
    """
    z = np.asarray(z, dtype=float)
    if delta == 0.0:
        return 1.0 - 2.0 * z
    g = delta * (1.0 - 2.0 * z) - log_sinhc(delta)
    return np.expm1(g) / delta


def load_kernel_h(delta: float, z):
    """``2 e^{-delta z} sum_n phi_n(z) n^2 pi^2 / (delta^2 + n^2 pi^2)^2`` in closed form.

    This is the zero-lag value of the time-integrated transient density seen
    by a unit constant load; at ``delta = 0`` it is ``z^2/2 - z + 1/3``.
    """
    z = np.asarray(z, dtype=float)
    d = delta
    if abs(d) < 1e-2:
        z2 = z * z
        c0 = (3 * z2 - 6 * z + 2) / 6
        c1 = -z * (4 * z2 - 9 * z + 4) / 6
        c2 = (45 * z2 * z2 - 120 * z2 * z + 75 * z2 - 4) / 90
        c3 = -z * (24 * z2 * z2 - 75 * z2 * z + 60 * z2 - 8) / 90
        c4 = (70 * z2 ** 3 - 252 * z2 * z2 * z + 245 * z2 * z2 - 63 * z2 + 4) / 630
        c5 = -z * (36 * z2 ** 3 - 147 * z2 * z2 * z + 168 * z2 * z2 - 70 * z2 + 12) / 945
        return c0 + d * (c1 + d * (c2 + d * (c3 + d * (c4 + d * c5))))
    w = omega(d)
    e2 = math.exp(-2 * d)
    a = w * e2 / (4 * d * d)
    k = (1 - e2 * (1 + 2 * d)) / (4 * d * d)
    b = w * ((w / (2 * d)) * k - a)
    ez = np.exp(-2 * d * z)
    return a + b * ez - (w / (2 * d)) * z * ez
