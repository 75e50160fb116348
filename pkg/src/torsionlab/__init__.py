"""Numerical laboratory for weighted orbital integrals, heat-kernel asymptotics
and regularized analytic torsion on SL(n,R)/SO(n) at small rank."""

from __future__ import annotations

__version__ = "0.1.0"
