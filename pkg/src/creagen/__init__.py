"""Creativity-driven GAN laboratory on a synthetic shape x texture garment dataset."""

__version__ = "0.1.0"
