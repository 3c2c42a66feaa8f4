"""Spatial kinetic battery model: compartments, transition density and PDE solution."""
from .compartments import (
    CompartmentSystem,
    compartment_available_capacity,
    compartment_remaining_capacity,
    simulate_compartments,
)
from .density import stationary_density, t_min, transition_density
from .params import SpatialParams, omega
from .solution import (
    asymptotic_profile,
    available_capacity,
    discharge_response,
    end_of_life,
    is_physically_realized,
    pde_solution,
    phase_plane_curve,
    phase_plane_residual,
    phase_plane_solve,
    phase_plane_to_csv,
    profile_to_csv,
    remaining_capacity,
)
