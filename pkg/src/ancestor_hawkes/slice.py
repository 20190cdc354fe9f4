"""Univariate slice sampling with the doubling procedure (Neal, 2003)."""
from __future__ import annotations

from typing import Callable

import numpy as np


class SliceSamplerError(RuntimeError):
    def __init__(self, message, **diagnostics):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


def _acceptable(x0, x1, y, left, right, width, logf) -> bool:
    # the doubling scheme must be able to reach x0's interval from x1
    differ = False
    while right - left > 1.1 * width:
        mid = 0.5 * (left + right)
        if (x0 < mid) != (x1 < mid):
            differ = True
        if x1 < mid:
            right = mid
        else:
            left = mid
        if differ and y >= logf(left) and y >= logf(right):
            return False
    return True


def slice_sample(x0: float, logf: Callable[[float], float], rng: np.random.Generator,
                 width: float = 1.0, max_doublings: int = 50, max_shrinks: int = 200) -> float:
    """One slice-sampling transition from ``x0`` for the log density ``logf``."""
    f0 = logf(x0)
    if not np.isfinite(f0):
        raise SliceSamplerError("start point has zero density", x0=x0, logf=f0)
    y = f0 - rng.exponential()
    left = x0 - width * rng.random()
    right = left + width
    f_left, f_right = logf(left), logf(right)
    k = max_doublings
    while k > 0 and (y < f_left or y < f_right):
        if rng.random() < 0.5:
            left -= right - left
            f_left = logf(left)
        else:
            right += right - left
            f_right = logf(right)
        k -= 1
    lo, hi = left, right
    for _ in range(max_shrinks):
        x1 = lo + rng.random() * (hi - lo)
        if y < logf(x1) and _acceptable(x0, x1, y, left, right, width, logf):
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
    raise SliceSamplerError("shrinkage did not converge", x0=x0, interval=(left, right),
                            doublings=max_doublings - k, level=y)
