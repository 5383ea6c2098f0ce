"""Dancer-Fucik spectrum curves, linking-based critical point search and
concentration estimates for jumping-nonlinearity elliptic problems."""

__version__ = "0.1.0"
