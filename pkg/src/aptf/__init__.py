"""Predictability-aware sample weighting for time series training."""

__version__ = "0.1.0"
