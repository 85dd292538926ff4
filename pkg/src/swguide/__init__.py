"""Sliced-Wasserstein toolkit."""
__version__ = "0.1.0"
