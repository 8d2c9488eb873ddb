"""Collision-aware frequency assignment for fixed-frequency transmon lattices."""
from __future__ import annotations

__version__ = "0.1.0"
