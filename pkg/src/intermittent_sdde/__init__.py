"""
Intermittent SDDE

Simulation and exponential-stability certificates for hybrid stochastic delay
systems under periodically intermittent feedback control based on
discrete-time observations.
"""

__version__ = "1.0.0"

from .main import main

__all__ = ["main"]
