"""Bayesian point estimation in log-concave models."""
__version__ = "0.1.0"
