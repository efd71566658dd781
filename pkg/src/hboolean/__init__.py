"""Monte Carlo toolkit for Poisson h-generalized Boolean models."""

__version__ = "0.1.0"
