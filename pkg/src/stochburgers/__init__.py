"""Solvers and verification tools for the viscous stochastic Burgers equation."""
from __future__ import annotations

__version__ = "0.1.0"
