"""Negotiation-aware reachability safety monitoring for two-car interactions."""

__version__ = "0.1.0"
