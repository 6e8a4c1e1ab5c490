"""Simulation and estimation toolkit for time-modulated reconfigurable surfaces."""

__version__ = "0.1.0"
