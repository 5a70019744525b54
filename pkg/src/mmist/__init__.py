"""Multimodality-guided image style transfer via cross-modal GAN inversion."""

__version__ = "0.1.0"
