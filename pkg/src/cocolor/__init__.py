"""Cooperative NIR/grayscale colorization with bilateral domain translation."""

__version__ = "0.1.0"

PATHS = ("N2C", "N2G", "N2G2C", "G2C", "G2N", "G2N2C")
