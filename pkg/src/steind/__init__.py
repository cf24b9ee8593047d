"""Stein-coupling bounds on the total variation distance to a discretized normal."""

__version__ = "0.1.0"
