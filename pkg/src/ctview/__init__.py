"""Desk-scale chest-CT analysis workbench."""

__version__ = "0.1.0"
