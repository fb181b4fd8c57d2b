"""Vortex-density toolkit for rotating two-dimensional condensates."""

__version__ = "0.1.0"
