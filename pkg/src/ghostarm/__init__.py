"""ghostarm: virtual-arm demonstration capture, datasets, and replay."""

__version__ = "0.1.0"
