"""Exact complexity measures, lattice estimators and rate experiments for tree ensembles."""

__version__ = "0.1.0"
