"""Homogenized load balancing for linearly divisible jobs."""

__version__ = "0.1.0"
