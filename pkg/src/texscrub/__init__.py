"""Sanitize LaTeX submission bundles and scan them for sensitive content."""

__version__ = "0.1.0"
