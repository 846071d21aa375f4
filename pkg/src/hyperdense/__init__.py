"""Hyperbolic dense retrieval on the Lorentz model."""

__version__ = "0.1.0"
