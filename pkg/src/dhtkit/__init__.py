"""Dendrogram toolkit: 2-adic event trees, emergent Bohmian fields, causal cones, observer ensembles."""

__version__ = "0.1.0"
