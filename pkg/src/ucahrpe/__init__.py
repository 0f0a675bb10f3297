"""Spherical-wave channel synthesis and path-parameter estimation for large UCAs."""

__version__ = "0.1.0"
