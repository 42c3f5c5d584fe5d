"""Nonlinear MPC path-following guidance for fixed-wing small UAS."""

from fwguidance.vehicle import (
    AircraftState,
    ControlCommand,
    ModelParameters,
    WindVector,
)

__all__ = [
    "AircraftState",
    "ControlCommand",
    "ModelParameters",
    "WindVector",
]

__version__ = "0.1.0"
