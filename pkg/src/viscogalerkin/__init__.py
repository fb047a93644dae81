"""Spectral Galerkin simulation of generalized-Newtonian flow on the torus."""

__version__ = "0.1.0"
