"""Sparse linear regression on truncated path signatures for irregularly sampled time series."""

__version__ = "0.1.0"
