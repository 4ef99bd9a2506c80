"""Simulation toolkit for driven phonon-mediated two-qubit gates in trapped ions."""

__version__ = "0.1.0"
