"""Exact and Monte Carlo tools for Glauber dynamics of the Curie-Weiss model."""

__version__ = "0.1.0"
