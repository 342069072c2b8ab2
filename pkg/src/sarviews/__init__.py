"""Texture-adaptive speckle views, semantic patch sampling and two-model contrastive training on grayscale SAR-like images."""

__version__ = "0.1.0"
