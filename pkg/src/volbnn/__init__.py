"""Probabilistic volatility-index forecasting with Bayesian last layers."""

__version__ = "0.1.0"
