"""State-of-charge models for battery cells: kinetic, spatial, stochastic and nonlinear."""

__version__ = "0.1.0"
