"""Nonlinear-mobility transport distances, gradient flows and convexity diagnostics."""

__version__ = "0.1.0"
