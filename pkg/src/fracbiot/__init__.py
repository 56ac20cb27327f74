"""Finite-volume poroelasticity with frictional contact on fractures."""
__version__ = "0.1.0"
