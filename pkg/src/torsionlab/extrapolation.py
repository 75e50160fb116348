"""Richardson extrapolation for limits of smooth sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RichardsonResult:
    value: float | np.ndarray
    residual: float | np.ndarray
    table: np.ndarray


def richardson(values: Sequence[float] | np.ndarray, ratio: float = 4.0, order: int | None = None) -> RichardsonResult:
    """Extrapolate ``values[k] = F(h_0 q^{-k})`` to ``h -> 0``.

    ``ratio`` is ``q^p`` where ``F(h) = F(0) + c_1 h^p + c_2 h^{2p} + ...``; for
    an expansion in ``h^2`` with halving steps use ``ratio=4``.  Column ``m``
    of the table removes the term ``h^{mp}``.  ``residual`` is the difference
    between the last two diagonal entries, a conservative error indicator.
    ``values`` may carry trailing axes, which are extrapolated independently.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0] if v.ndim else 0
    if n == 0:
        raise ValueError("no values to extrapolate")
    depth = n if order is None else min(n, order + 1)
    T = np.full((n, depth) + v.shape[1:], np.nan)
    T[:, 0] = v
    for m in range(1, depth):
        f = ratio ** m
        for k in range(m, n):
            T[k, m] = (f * T[k, m - 1] - T[k - 1, m - 1]) / (f - 1)
    diag = [T[k, min(k, depth - 1)] for k in range(n)]
    value = diag[-1]
    residual = np.abs(diag[-1] - diag[-2]) if n > 1 else np.full_like(value, np.inf)
    if v.ndim == 1:
        return RichardsonResult(float(value), float(residual), T)
    return RichardsonResult(value, residual, T)
