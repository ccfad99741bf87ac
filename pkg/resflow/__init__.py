"""Greedy residual flows that transport particle clouds under a finite-feature MMD."""

__version__ = "1.0.0"
