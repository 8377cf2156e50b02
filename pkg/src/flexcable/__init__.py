"""Quadrotor carrying a flexible cable: FDM simulation, POD reduced-order model, NMPC."""

__version__ = "0.1.0"
