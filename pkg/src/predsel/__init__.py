"""Bayesian predictive model selection for conjugate Gaussian linear regression."""

__version__ = "0.1.0"
