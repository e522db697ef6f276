"""Posterior sampling with model-predictive control for continuous control."""

__version__ = "0.1.0"
