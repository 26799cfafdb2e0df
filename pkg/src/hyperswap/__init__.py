"""Parallel tempering over training hyperparameters."""

__version__ = "0.1.0"
