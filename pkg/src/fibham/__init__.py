"""Spectrum, fractal dimension and transport for the Fibonacci Hamiltonian."""

__version__ = "0.1.0"
