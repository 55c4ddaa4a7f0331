"""Subjective-logic and Dirichlet uncertainty tools for evidential classifiers."""

__version__ = "0.1.0"
