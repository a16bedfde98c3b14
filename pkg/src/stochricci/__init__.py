"""Stochastic-target representation of the normalized Ricci flow on the flat torus."""

__version__ = "0.1.0"
