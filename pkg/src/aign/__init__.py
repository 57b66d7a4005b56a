"""Additive inverse Gaussian noise channel: noise law, capacity bounds, receivers and a first-passage simulator."""

__version__ = "0.1.0"
