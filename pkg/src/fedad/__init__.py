"""Federated time-series anomaly detection with compressed gradient exchange."""

__version__ = "0.1.0"
