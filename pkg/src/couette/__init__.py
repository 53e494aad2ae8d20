"""A three-state exclusion process on a strip between two moving walls.

Exact simulation, moment equations, the single-column chain and closed-form
stationary profiles."""
from .lattice import Configuration, ParameterError, Params, Velocity

__all__ = ["Configuration", "ParameterError", "Params", "Velocity"]
__version__ = "0.1.0"
