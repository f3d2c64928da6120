"""Two-person interaction recognition from 2D pose sequences."""

__version__ = "0.1.0"
