"""Reflection removal from flash/no-flash raw pairs using the flash-only image."""

__version__ = "0.1.0"
