"""Pilot spacing design for phase-noise tracking with Wiener interpolation."""

__version__ = "0.1.0"
