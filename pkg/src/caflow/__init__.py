"""Trace classes, perturbation exponents and density flow of 1-d cellular automata."""

__version__ = "0.1.0"
