"""Eyeglasses and cast-shadow removal: synthetic pairs, detect-then-remove networks."""

__version__ = "0.1.0"
