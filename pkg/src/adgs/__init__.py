"""Differentiable Gaussian splatting with alternating high/low densification training."""

__version__ = "0.1.0"
