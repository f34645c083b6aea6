"""Simulation and analysis of click statistics from ensembles of single-photon emitters."""

__version__ = "0.1.0"
