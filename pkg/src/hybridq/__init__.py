"""Hybrid classical-quantum latent-space GAN."""

__version__ = "0.1.0"
