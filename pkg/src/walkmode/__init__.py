"""Walking-mode estimation from two thigh-angle signals."""

__version__ = "0.1.0"
