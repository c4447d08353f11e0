"""Robust one-qubit gate synthesis by sequential convex programming."""

__version__ = "0.1.0"
