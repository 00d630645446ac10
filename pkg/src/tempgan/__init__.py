"""Conditional Wasserstein GAN for hourly regional temperature maps."""

__version__ = "0.1.0"
