"""Situational-awareness assessment of first-aid bystanders from scene features."""

__version__ = "0.1.0"
