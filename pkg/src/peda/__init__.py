"""Desk-scale incremental 4D-Var for the hydrostatic primitive equations
with Lagrangian float-position observations, plus numerical checks of the
underlying energy estimates and Picard construction."""

__version__ = "0.1.0"
