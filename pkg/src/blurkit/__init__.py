"""Blur-to-video toolkit: blur formation, exposure-conditioned diffusion, bidirectional metrics."""

__version__ = "0.1.0"
