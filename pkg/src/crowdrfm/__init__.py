"""Crowd-sourced radio fingerprint maps from dead-reckoned trajectories."""

__version__ = "0.1.0"
