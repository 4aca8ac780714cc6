"""Simulation and training of distributed quantum classifiers that share
Bell pairs between two processors."""

__version__ = "0.1.0"
