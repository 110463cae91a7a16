"""Fluctuation electrodynamics of planar multilayers with gain, motion and bias."""

__version__ = "0.1.0"
