"""Rectified-flow primitives: interpolation, clean-latent extrapolation and the Euler step.

All latent math runs in float64.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InputError


def _vec(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"{name} must be a 1-D vector, got shape {x.shape}")
    return x


def _same_dim(a, b, names=("x", "v")):
    a, b = _vec(a, names[0]), _vec(b, names[1])
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {names[0]}{a.shape} vs {names[1]}{b.shape}")
    return a, b


def _check_time(t):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t must lie in [0, 1], got {t}")
    return t


@dataclass(frozen=True)
class LatentState:
    x: np.ndarray
    t: float

    def __post_init__(self):
        x = _vec(self.x)
        if not np.all(np.isfinite(x)):
            raise InputError("latent state has non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))
        if not self.t >= 0.0:
            raise InputError(f"time must be non-negative, got {self.t}")

    @property
    def dim(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class TimeGrid:
    """N integration intervals; ``times`` holds the N+1 boundaries from high to 0."""

    times: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) < 2:
            raise InputError("a time grid needs at least one interval")
        if times[-1] != 0.0 or times[0] > 1.0:
            raise InputError("time grid must start at or below 1 and end at exactly 0")
        if any(a <= b for a, b in zip(times, times[1:])):
            raise InputError("time grid must be strictly descending")
        object.__setattr__(self, "times", times)

    @property
    def N(self):
        return len(self.times) - 1

    def dt(self, i):
        return self.times[i] - self.times[i + 1]


def interpolate(x0, x1, t):
    x0, x1 = _same_dim(x0, x1, ("x0", "x1"))
    t = _check_time(t)
    return (1.0 - t) * x0 + t * x1


def clean_estimate_flow(x_t, v, t):
    """One-shot extrapolation to t=0 along the current velocity: ``x_t - t*v``."""
    x_t, v = _same_dim(x_t, v, ("x_t", "v"))
    t = _check_time(t)
    return x_t - t * v


def euler_step_flow(x_t, v, dt):
    x_t, v = _same_dim(x_t, v, ("x_t", "v"))
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    return x_t - dt * v


def make_time_grid(N):
    if int(N) != N or N < 1:
        raise InputError(f"N must be a positive integer, got {N}")
    N = int(N)
    return TimeGrid(tuple(i / N for i in range(N, 0, -1)) + (0.0,))
