"""Locally stable ReLU networks via sparse manifold and Hamming regularization."""

__version__ = "0.1.0"
TOOL = f"stablegrad {__version__}"
