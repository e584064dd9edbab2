"""Desk-scale laboratory for reconstruction-based point-cloud backdoors."""

__version__ = "0.1.0"
