"""Overhang tower: a desk-scale lab for sequential physical planning."""

__version__ = "0.1.0"
