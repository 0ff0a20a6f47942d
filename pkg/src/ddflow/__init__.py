"""Optimisation-based domain decomposition for transient incompressible
Navier-Stokes, with POD-Galerkin and POD-NN reduced order models."""

__version__ = "0.1.0"
