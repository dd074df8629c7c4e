"""Adversarially reweighted learning for group-blind max-min fairness on tabular data."""

__version__ = "0.1.0"
