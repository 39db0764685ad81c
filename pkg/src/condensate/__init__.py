"""Condensation diagnostics for small neural networks, with a NumPy reference trainer."""

__version__ = "0.1.0"
