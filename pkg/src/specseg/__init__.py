"""Adaptive Bayesian time-varying spectrum estimation for multivariate series."""

__version__ = "0.1.0"
