"""Chain of ``m`` kinetic compartments exchanging charge pairwise.

Adjacent compartments ``j, j+1`` exchange ``k_c (c u_{j+1} - (1 - c) u_j)``;
the migration weight ``p`` adds ``k_c p (N - u_1)`` to the first compartment,
``-k_c p (u_j - u_{j-1})`` to the interior ones and ``-k_c p (N - u_{m-1})`` to
the last, so the migration terms telescope and total charge is conserved.
The load drains compartment 1.

The system is linear with constant coefficients between load changes, so it
is propagated with the exact affine matrix exponential.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import ConstantCurrent, DischargeProfile, DischargeTrace, discharge_trace
from ..errors import ModelError
from ..numerics import affine_propagator
from .params import SpatialParams


@dataclass(frozen=True)
class CompartmentSystem:
    """``m`` compartments with exchange weight ``c``, migration ``p`` and rate ``k``.

    ``load_scale`` multiplies the discharge applied to compartment 1. It is 1
    for the plain charge-content model; :meth:`from_spatial` sets it to
    ``m / ell`` because there the compartments hold charge densities on cells
    of width ``ell / m``.
    """

    m: int
    c: float
    p: float
    k: float
    N: float
    u0: np.ndarray = field(default=None)
    load_scale: float = 1.0
    cell_width: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ModelError("compartment count m must be an integer >= 2")
        if not 0 < self.c < 1:
            raise ModelError(f"exchange weight c={self.c} outside (0, 1); for scaled weights this means |mu| >= m")
        if not self.k > 0:
            raise ModelError("rate k must be positive")
        u0 = np.full(self.m, float(self.N)) if self.u0 is None else np.asarray(self.u0, dtype=float)
        if u0.shape != (self.m,):
            raise ModelError("initial charge vector must have length m")
        object.__setattr__(self, "u0", u0)

    @classmethod
    def from_spatial(cls, params: SpatialParams, m: int) -> "CompartmentSystem":
        """Scaled weights ``c_m = (1 + mu/m)/2``, ``p_m = rho/m``, ``k = kappa m^2``."""
        if abs(params.mu) >= m:
            raise ModelError(f"|mu|={abs(params.mu)} must be below m={m} so that 0 < c_m < 1")
        ell = params.ell
        return cls(
            m=int(m), c=(1 + params.mu / m) / 2, p=params.rho / m, k=params.kappa * m * m, N=params.N,
            load_scale=m / ell, cell_width=ell / m,
        )

    @property
    def kc(self) -> float:
        return self.k / (self.c * (1 - self.c))

    @property
    def mu_c(self) -> float:
        return 2 * self.c - 1

    def system_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A, b)`` with ``du/dt = A u + b`` at zero load."""
        m, c, p, kc, N = self.m, self.c, self.p, self.kc, self.N
        A = np.zeros((m, m))
        b = np.zeros(m)
        j = np.arange(m - 1)
        # exchange flow F_j = kc (c u_{j+1} - (1-c) u_j) into j, out of j+1
        A[j, j + 1] += kc * c
        A[j, j] -= kc * (1 - c)
        A[j + 1, j + 1] -= kc * c
        A[j + 1, j] += kc * (1 - c)
        A[0, 0] -= kc * p
        b[0] += kc * p * N
        i = np.arange(1, m - 1)
        A[i, i] -= kc * p
        A[i, i - 1] += kc * p
        A[m - 1, m - 2] += kc * p
        b[m - 1] -= kc * p * N
        return A, b

    def rhs(self, rate_of_t):
        """Right-hand side for RK4 oracles: ``rate_of_t(t_mid)`` gives the load."""
        A, b = self.system_matrix()
        e1 = np.zeros(self.m)
        e1[0] = self.load_scale

        def f(t, u, t_mid):
            return A @ u + b - rate_of_t(t_mid) * e1

        return f


def simulate_compartments(sys: CompartmentSystem, profile: DischargeProfile | DischargeTrace, t_grid) -> np.ndarray:
    """Charges ``u[i, j]`` of compartment ``j`` at ``t_grid[i]``.

    Between consecutive events (grid times, load breakpoints, jumps) the rate
    is constant and the state is advanced by the exact propagator; jumps
    remove ``load_scale * A`` from compartment 1.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or np.any(np.diff(t_grid) <= 0) or t_grid[0] < 0:
        raise ModelError("t_grid must be strictly increasing and non-negative")
    horizon = float(t_grid[-1])
    if isinstance(profile, DischargeTrace):
        trace = profile
    else:
        trace = discharge_trace(profile, max(horizon, 1e-12))
    A, b = sys.system_matrix()
    e1 = np.zeros(sys.m)
    e1[0] = sys.load_scale

    events = np.unique(np.concatenate([[0.0], t_grid, trace.times[trace.times <= horizon],
                                       trace.jump_times[trace.jump_times <= horizon]]))
    jumps = {}
    for s, a in zip(trace.jump_times, trace.jump_sizes):
        jumps[float(s)] = jumps.get(float(s), 0.0) + float(a)
    cache: dict[tuple[float, float], tuple[np.ndarray, np.ndarray]] = {}
    out = np.empty((len(t_grid), sys.m))
    u = sys.u0.copy()
    gi = 0

    def apply_jump(t, u):
        if t in jumps:
            u = u.copy()
            u[0] -= sys.load_scale * jumps[t]
        return u

    t = 0.0
    u = apply_jump(t, u)
    if t_grid[0] == 0.0:
        out[0] = u
        gi = 1
    for t_next in events[1:]:
        dt = float(t_next - t)
        rate = trace.rate_at(0.5 * (t + t_next))
        key = (round(dt, 15), rate)
        if key not in cache:
            cache[key] = affine_propagator(A, b - rate * e1, dt)
        Phi, phi = cache[key]
        u = Phi @ u + phi
        t = float(t_next)
        u = apply_jump(t, u)
        while gi < len(t_grid) and t_grid[gi] == t:
            out[gi] = u
            gi += 1
    return out


def compartment_available_capacity(params: SpatialParams, m: int, rate: float, t_grid) -> np.ndarray:
    """``u_1(t)`` of the scaled ``m``-compartment model under constant current."""
    sys = CompartmentSystem.from_spatial(params, m)
    horizon = float(np.max(t_grid))
    load = ConstantCurrent(rate) if rate > 0 else DischargeTrace(np.array([0.0, horizon]), np.zeros(1))
    return simulate_compartments(sys, load, t_grid)[:, 0]


def compartment_remaining_capacity(sys: CompartmentSystem, u: np.ndarray) -> np.ndarray:
    """``u_1 + cell_width * sum_j u_j``, the analogue of ``u(t, 0) + int u dx``."""
    u = np.atleast_2d(u)
    return u[:, 0] + sys.cell_width * u.sum(axis=1)
