"""Independent reference solvers used only by the tests."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def crank_nicolson_density(ell, kappa, delta, t_end, n_cells=2000, dt=1e-4, startup=4):
    """Forward equation of the reflected diffusion from a point mass at ``x = 0``.

    Vertex-centred finite volumes with half cells at both ends, central
    fluxes ``J = b p - D p_x`` (``D = 2 kappa ell^2``, ``b = -4 kappa ell delta``)
    and zero flux through both walls. ``startup`` implicit Euler steps at
    ``dt / 2`` damp the initial spike before Crank-Nicolson takes over.

    Returns the node positions and the density at ``t_end``.
    """
    dx = ell / n_cells
    x = np.linspace(0.0, ell, n_cells + 1)
    D = 2.0 * kappa * ell * ell
    b = -4.0 * kappa * ell * delta
    vol = np.full(n_cells + 1, dx)
    vol[0] = vol[-1] = dx / 2

    # face i+1/2 flux: J = (b/2 + D/dx) p_i + (b/2 - D/dx) p_{i+1}
    fa, fb = b / 2 + D / dx, b / 2 - D / dx
    n = n_cells + 1
    main = np.zeros(n)
    upper = np.zeros(n - 1)
    lower = np.zeros(n - 1)
    # dp_i/dt * vol_i = J_{i-1/2} - J_{i+1/2}
    main[:-1] -= fa
    upper[:] -= fb
    main[1:] += fb
    lower[:] += fa
    main /= vol
    upper /= vol[:-1]
    lower /= vol[1:]

    def banded(scale):
        ab = np.zeros((3, n))
        ab[0, 1:] = -scale * upper
        ab[1, :] = 1.0 - scale * main
        ab[2, :-1] = -scale * lower
        return ab

    def apply(p, scale):
        out = p + scale * main * p
        out[:-1] += scale * upper * p[1:]
        out[1:] += scale * lower * p[:-1]
        return out

    p = np.zeros(n)
    p[0] = 1.0 / vol[0]
    t = 0.0
    ie = banded(dt / 2)
    for _ in range(startup):
        p = solve_banded((1, 1), ie, p)
        t += dt / 2
    cn = banded(dt / 2)
    steps = int(round((t_end - t) / dt))
    h = (t_end - t) / steps
    if abs(h - dt) > 1e-15:
        cn = banded(h / 2)
    for _ in range(steps):
        p = solve_banded((1, 1), cn, apply(p, h / 2))
    return x, p


def rk4_scalar(rhs, x0, t_end, step):
    """Plain fixed-step RK4 for a scalar ODE ``x' = rhs(t, x)`` on ``[0, t_end]``."""
    n = int(round(t_end / step))
    h = t_end / n
    x, t = float(x0), 0.0
    for _ in range(n):
        k1 = rhs(t, x)
        k2 = rhs(t + h / 2, x + h / 2 * k1)
        k3 = rhs(t + h / 2, x + h / 2 * k2)
        k4 = rhs(t + h, x + h * k3)
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return x
