"""Uncertainty-prioritized experience replay on tabular tasks."""

__version__ = "0.1.0"
