"""DiffC rate-distortion lab and reference progressive codec."""

__version__ = "1.0.0"
