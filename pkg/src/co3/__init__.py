"""Bayesian nonparametric co-clustering of ordinal data with informative censoring."""

__version__ = "0.1.0"
