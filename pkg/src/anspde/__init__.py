"""Spectral Galerkin simulator for the stochastic 3D Navier-Stokes equation with
horizontal viscosity and Brinkman-Forchheimer damping."""

__version__ = "0.1.0"
