"""Simulation and numerical analysis of spatial seed-bank diffusions."""

__version__ = "0.1.0"
