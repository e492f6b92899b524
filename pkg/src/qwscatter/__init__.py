"""Scattering theory and dispersive estimates for one-dimensional quantum walks."""

__version__ = "0.1.0"
