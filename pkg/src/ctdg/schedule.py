"""Noise schedules: rate multiplier beta(t) and its integral beta_bar(t)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("cosine", "constant")


def _check_t(t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return arr


@dataclass(frozen=True)
class NoiseSchedule:
    family: str = "cosine"
    alpha: float = 5.0
    t_min: float = 0.01

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.t_min < 1:
            raise ValueError("t_min must lie in (0, 1)")

    def beta(self, t):
        t = _check_t(t)
        if self.family == "cosine":
            out = self.alpha * np.pi / 2 * np.sin(np.pi * t / 2)
        else:
            out = np.full_like(t, self.alpha)
        return float(out) if out.ndim == 0 else out

    def beta_bar(self, t):
        t = _check_t(t)
        if self.family == "cosine":
            out = self.alpha * (1.0 - np.cos(np.pi * t / 2))
        else:
            out = self.alpha * t
        return float(out) if out.ndim == 0 else out
