"""Counterfactual strategy evolution and information-leakage scoring for trading agents."""

__version__ = "0.1.0"
