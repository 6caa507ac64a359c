"""Numerical toolkit for the extended Bogomolny equations on a product with a half-line."""

__version__ = "0.1.0"
