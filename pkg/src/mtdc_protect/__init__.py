"""Hybrid primary dc-fault detection for a four-terminal meshed HVdc grid."""

__version__ = "0.1.0"
