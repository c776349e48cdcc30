"""Frozen-photon dynamics in Jaynes-Cummings-Hubbard resonator arrays."""

__version__ = "0.1.0"
