"""Geometric control quantities and observability Gramians for waves on model surfaces."""

__version__ = "0.1.0"
