"""Dual conditioned motion diffusion for pose-based video anomaly detection."""

__version__ = "0.1.0"
