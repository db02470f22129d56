"""Trajectory-based landscape analysis for fixed-budget CMA-ES performance prediction."""

__version__ = "0.1.0"
