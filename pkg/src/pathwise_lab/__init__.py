"""Pathwise hedging and arbitrage laboratory."""

__version__ = "0.1.0"
