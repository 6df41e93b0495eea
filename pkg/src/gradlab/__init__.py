"""Numerical laboratory for first-order gradient operators on trace-free
symmetric tensor fields over periodic grids."""

__version__ = "0.1.0"
