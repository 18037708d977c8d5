"""Multi-task MIL on synthetic multi-magnification patch bags."""

__version__ = "0.1.0"
