"""Simulation workbench for loudspeaker-based spatial audio reproduction
of multi-microphone hearing aid processing."""

__version__ = "0.1.0"
