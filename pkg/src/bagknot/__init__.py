"""Keypoint-guided bag manipulation: simulated data, correspondence encoder, diffusion policy."""

__version__ = "0.1.0"
