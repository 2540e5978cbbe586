"""Inductive Granger causal modeling for heterogeneous multivariate time series."""

__version__ = "0.1.0"
