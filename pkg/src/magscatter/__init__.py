"""Pseudo-spectral simulation and verification of magnetic Schrodinger scattering."""

__version__ = "0.1.0"
