"""Noise schedules: time-dependent scaling of the base rate matrix.

The forward generator is rate.matrix * beta(t).  Everything downstream only
ever needs the integral of beta over an interval (the accumulated noise tau),
so schedules expose both the pointwise value and the closed-form integral.

Kinds:
    constant: beta(t) = base_rate, integral = base_rate * (t - s).
    cosine:   integral from 0 to t equals 1 - sqrt(cos(pi*t/2)), which ramps
              noise slowly at first and diverges pointwise at t = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

_COS_FLOOR = 1e-12  # keeps beta() finite at the cosine endpoint

SCHEDULE_KINDS = ("constant", "cosine")


def _cos_half(t):
    """cos(pi*t/2) written as sin(pi*(1-t)/2): exact 0 at t=1, exact 1 at t=0."""
    return np.sin(np.pi / 2.0 * (1.0 - np.asarray(t, dtype=np.float64)))


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "constant"
    base_rate: float = 1.0
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.base_rate < 0 or self.horizon <= 0:
            raise DomainError("base_rate must be >= 0 and horizon positive")
        if self.kind == "cosine" and self.horizon > 1.0 + 1e-12:
            raise DomainError("cosine schedule is defined on [0, 1]")

    def _check_time(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < -1e-12) or np.any(t > self.horizon + 1e-9):
            raise DomainError(f"time outside [0, {self.horizon}]")
        return t

    def beta(self, t):
        """Pointwise rate multiplier beta(t)."""
        t = self._check_time(t)
        if self.kind == "constant":
            return np.broadcast_to(np.float64(self.base_rate), t.shape).copy() if t.shape else float(self.base_rate)
        c = np.maximum(_cos_half(t), _COS_FLOOR)
        out = (np.pi / 4.0) * np.sin(np.pi * t / 2.0) / np.sqrt(c)
        return float(out) if out.shape == () else out

    def cumulative(self, s, t) -> float:
        """Integral of beta over [s, t] (the accumulated noise tau)."""
        s_arr = self._check_time(s)
        t_arr = self._check_time(t)
        if np.any(t_arr < s_arr - 1e-12):
            raise DomainError("need s <= t")
        if self.kind == "constant":
            out = self.base_rate * np.maximum(t_arr - s_arr, 0.0)
        else:
            cs = np.sqrt(np.maximum(_cos_half(s_arr), 0.0))
            ct = np.sqrt(np.maximum(_cos_half(t_arr), 0.0))
            out = np.maximum(cs - ct, 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def invert_cumulative(self, s: float, target: float) -> float:
        """Smallest t in [s, horizon] with cumulative(s, t) = target.

        Returns +inf when the horizon is reached first.  Constant schedules
        invert exactly; other kinds bisect the monotone integral to 1e-12.
        """
        if target < 0:
            raise DomainError("target integral must be >= 0")
        if target == 0.0:
            return float(s)
        if self.kind == "constant":
            if self.base_rate == 0.0:
                return np.inf
            t_star = s + target / self.base_rate
            return t_star if t_star <= self.horizon else np.inf
        if self.cumulative(s, self.horizon) < target:
            return np.inf
        lo, hi = float(s), float(self.horizon)
        while hi - lo > 1e-12:
            mid = 0.5 * (lo + hi)
            if self.cumulative(s, mid) < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)
