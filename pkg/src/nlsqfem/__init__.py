"""Nonlinear least-squares finite elements on triangles."""

__version__ = "0.1.0"
