"""
pchm: random conductance model laboratory.

Estimates the effective diffusion matrix of random walks among random
conductances and checks resolvent, semigroup and hydrodynamic homogenization
against the continuum heat equation.
"""

__version__ = "0.1.0"
