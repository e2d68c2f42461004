"""Normal-approximation summaries used across experiments."""
from __future__ import annotations

import math

import numpy as np

Z95 = 1.959963984540054


def mean_se(values) -> tuple[float, float]:
    """Sample mean and its standard error (``ddof=1``; zero for a single value)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def mean_half_width(values, z: float = Z95) -> tuple[float, float]:
    """Mean and ``z * SE`` half-width of a normal-approximation interval."""
    m, se = mean_se(values)
    return m, z * se
