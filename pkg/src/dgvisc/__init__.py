"""Discontinuous Galerkin solver for 1D conservation laws with a trainable artificial viscosity."""

__version__ = "0.1.0"
