"""Gated-ReLU networks with fixed activation patterns."""
__version__ = "0.1.0"
