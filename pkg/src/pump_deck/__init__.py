"""Adiabatic pumping under pure-dephasing Lindblad dynamics."""

__version__ = "0.1.0"
