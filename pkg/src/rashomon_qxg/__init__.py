"""Rashomon-set explanation agreement on qualitative explainable graphs."""

__version__ = "0.1.0"
