"""Lattice verification toolkit for multi-time wave functions with fermion-boson emission and absorption."""

__version__ = "0.1.0"
