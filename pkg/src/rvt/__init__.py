"""Robust vision transformer components at desk scale."""

__version__ = "0.1.0"
