"""Quasi-static network transport simulation of tau and the Tau-BNO neural-operator surrogate."""

__version__ = "0.1.0"
