"""Polyfractal dynamical decoupling under random and Fibonacci timing noise."""

__version__ = "0.1.0"
