"""Desk-scale laboratory for the SURE uncertainty-aware training recipe."""

__version__ = "0.1.0"
