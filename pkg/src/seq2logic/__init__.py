"""Attention encoder-decoder parser with copy and cache output segments."""

__version__ = "0.1.0"
