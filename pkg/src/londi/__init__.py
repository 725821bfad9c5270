"""Learned switching between a cheap QUICK policy and an expensive DEEPTHINK policy."""

__version__ = "0.1.0"
