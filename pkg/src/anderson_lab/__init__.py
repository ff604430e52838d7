"""Monte Carlo laboratory for exponential traces of two-dimensional
random Schroedinger operators, built on renormalized self and mutual
intersection local times of planar Brownian paths."""

__version__ = "0.1.0"
