"""Empirical wavelet transforms with demons-estimated Fourier mappings."""

__version__ = "0.1.0"
