"""Spatially coupled LDPC chain ensembles: analysis, simulation and streaming."""

__version__ = "0.1.0"
