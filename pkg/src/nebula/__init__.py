"""Episode data platform and dual-axis evaluation harness for manipulation policies."""

__version__ = "0.1.0"
