"""Desk-scale NASNet-ViT lung image classifier built on a small numpy autograd core."""

__version__ = "0.1.0"
