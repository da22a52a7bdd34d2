"""Practical DPG solver kernel for Poisson and planar linear elasticity."""

__version__ = "0.1.0"
