"""Numerical laboratory for the parabolic-parabolic Keller-Segel system on the plane."""

__version__ = "0.1.0"
