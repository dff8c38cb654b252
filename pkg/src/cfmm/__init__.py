"""Switched-array channel-sounding simulator and PDP evaluation toolkit."""

__version__ = "0.1.0"
