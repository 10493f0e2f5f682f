"""Robust constrained RL for HEV fuel-optimal control under observation attacks."""

__version__ = "0.1.0"
