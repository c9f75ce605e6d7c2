"""Measure-valued hard-potential Boltzmann numerics."""

__version__ = "0.1.0"
