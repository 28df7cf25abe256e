"""Behavioral-biometric similarity scoring and cheating-ring detection."""

__version__ = "0.1.0"
