"""Noise-level (sigma) parameterized diffusion: eps-prediction clean estimate and Euler step."""
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .flow_core import _same_dim


@dataclass(frozen=True)
class SigmaSchedule:
    sigmas: tuple

    def __post_init__(self):
        sigmas = tuple(float(s) for s in self.sigmas)
        if len(sigmas) < 2:
            raise InputError("a sigma schedule needs at least one interval")
        if not all(np.isfinite(sigmas)) or min(sigmas) < 0:
            raise InputError("sigmas must be finite and non-negative")
        if sigmas[-1] != 0.0:
            raise InputError("sigma schedule must end at exactly 0")
        if any(a <= b for a, b in zip(sigmas, sigmas[1:])):
            raise InputError("sigma schedule must be strictly descending")
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def N(self):
        return len(self.sigmas) - 1

    @property
    def sigma_max(self):
        return self.sigmas[0]


def clean_estimate_diffusion(x_t, eps, sigma_t):
    x_t, eps = _same_dim(x_t, eps, ("x_t", "eps"))
    if not sigma_t >= 0:
        raise InputError(f"sigma must be non-negative, got {sigma_t}")
    return x_t - float(sigma_t) * eps


def euler_step_diffusion(x_t, eps, sigma_t, sigma_next):
    x_t, eps = _same_dim(x_t, eps, ("x_t", "eps"))
    if not (sigma_t > sigma_next >= 0):
        raise InputError(f"need sigma_t > sigma_next >= 0, got {sigma_t}, {sigma_next}")
    return x_t - (float(sigma_t) - float(sigma_next)) * eps


def karras_sigmas(N, sigma_min, sigma_max, rho=7.0):
    """N noise levels from sigma_max down to sigma_min, uniform in sigma**(1/rho)."""
    ramp = np.linspace(0.0, 1.0, N) if N > 1 else np.zeros(1)
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    return (hi + ramp * (lo - hi)) ** rho


def make_sigma_schedule(N, sigma_max, kind="karras", sigma_min=None, rho=7.0):
    """Descending schedule of N+1 noise levels ending at an exact 0.

    ``karras`` places N levels between ``sigma_max`` and ``sigma_min`` (default
    ``sigma_max/100``) and appends the terminal 0. ``linear`` spaces N+1 levels
    uniformly from ``sigma_max`` to 0.
    """
    if int(N) != N or N < 1:
        raise InputError(f"N must be a positive integer, got {N}")
    if not sigma_max > 0:
        raise InputError(f"sigma_max must be positive, got {sigma_max}")
    N = int(N)
    if kind == "linear":
        sigmas = sigma_max * np.arange(N, -1, -1) / N
    elif kind == "karras":
        if sigma_min is None:
            sigma_min = sigma_max / 100.0
        sigmas = np.append(karras_sigmas(N, sigma_min, sigma_max, rho), 0.0)
        sigmas[0] = sigma_max
    else:
        raise InputError(f"unknown schedule kind {kind!r}")
    sigmas[-1] = 0.0
    return SigmaSchedule(tuple(sigmas))
