"""Monitored Ising / Majorana circuits from bulk-measured cluster states."""

from .lattice import CircuitSpec, Trajectory, VortexField, build_spec

__all__ = ["CircuitSpec", "Trajectory", "VortexField", "build_spec"]
__version__ = "0.1.0"
