"""Neurosymbolic encoders for trajectory data."""

__version__ = "0.1.0"
