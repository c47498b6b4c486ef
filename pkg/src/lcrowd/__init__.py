"""Procedural crowd simulation and behavior classification."""
