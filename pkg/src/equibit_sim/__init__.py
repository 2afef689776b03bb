"""Desk-scale simulator of a peer-to-peer electronic equity protocol."""

__version__ = "0.1.0"
