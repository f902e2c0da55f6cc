"""Vineyard yield estimation from proximal imagery and yield-monitor streams."""

__version__ = "0.1.0"
