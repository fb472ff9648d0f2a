"""Localized multiscale Petrov-Galerkin solvers for the Helmholtz equation."""

__version__ = "0.1.0"
