"""Simulator and verification toolkit for averaging-based consensus on dynamic directed networks."""

__version__ = "0.1.0"
