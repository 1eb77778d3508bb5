"""Desk-scale synthetic peg-in-hole assembly sandbox."""

__version__ = "0.1.0"
