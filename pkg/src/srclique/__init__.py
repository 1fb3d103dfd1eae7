"""Wavelet-domain clique super-resolution network built on a small numpy autograd engine."""

__version__ = "0.1.0"
