"""Nonlinear bond-based peridynamics with P1 finite elements and
central-difference time stepping."""

from .kernels import BACKEND
from .potential import PotentialSpec, calibrate, critical_strain, inflection_point, potential_constants
from .geometry import Box, FeField, Mesh, build_horizon_quadrature, build_uniform_mesh, interpolate, taper_omega

__version__ = "0.1.0"
