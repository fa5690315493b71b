"""Weakly supervised video anomaly detection and classification with two-level attention."""

__version__ = "0.1.0"
