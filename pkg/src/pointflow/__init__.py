"""Dependency-aware key point decomposition with parallel content expansion."""

__version__ = "0.1.0"
