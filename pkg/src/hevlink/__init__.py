"""Streaming temporal link prediction from recent-neighbour overlap sequences."""

__version__ = "0.1.0"
