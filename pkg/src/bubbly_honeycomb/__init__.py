"""Subwavelength band structure of bubbly honeycomb crystals."""

__version__ = "0.1.0"
