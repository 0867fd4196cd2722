"""Gradient of the artifact loss with respect to the noisy latent.

The chain is clean estimate -> decode -> detect -> mean-square loss, and its
reverse pass is written out link by link. Two modes:

``detached_velocity``
    The field output is held constant, so d x0_hat / d x_t is the identity.
``exact``
    Also differentiates through the field: ``I - t * dv/dx`` for flows,
    ``I - sigma * d eps/dx`` for diffusion.
"""
from enum import Enum

import numpy as np

from .detector import eval_mask, mask_jacobian_action
from .errors import InputError
from .models import decode, decode_transpose


class GradMode(str, Enum):
    DETACHED = "detached_velocity"
    EXACT = "exact"


def artifact_loss(mask):
    M = getattr(mask, "values", mask)
    return float(np.mean(np.square(M)))


def loss_at(x_t, t, field, decoder, detector, frozen=None):
    """Artifact loss of the decoded clean estimate; ``frozen`` replaces the field output."""
    x_t = np.asarray(x_t, dtype=np.float64)
    f = field(x_t, t) if frozen is None else frozen
    return artifact_loss(eval_mask(decode(x_t - t * f, decoder), detector))


def pullback(x_t, t, field, cot_x0, mode):
    """Map a cotangent on x0_hat to one on x_t."""
    mode = GradMode(mode)
    if mode is GradMode.DETACHED:
        return cot_x0
    if not hasattr(field, "vjp"):
        raise InputError("exact mode needs a field with a vjp(x, t, cotangent) method")
    return cot_x0 - t * field.vjp(x_t, t, cot_x0)


def grad_artifact(x_t, t, field, decoder, detector, mode=GradMode.DETACHED, v=None):
    """Gradient of the artifact loss w.r.t. ``x_t``.

    ``t`` is the flow time, or the noise level sigma when ``field`` is a
    denoiser. ``v`` may pass in an already evaluated field output.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if v is None:
        v = field(x_t, t)
    u = decode(x_t - t * v, decoder)
    M = eval_mask(u, detector).values
    cot_u = mask_jacobian_action(u, detector, 2.0 * M / M.size)
    return pullback(x_t, t, field, decode_transpose(cot_u, decoder), mode)


def finite_difference_grad(x_t, t, field, decoder, detector, mode=GradMode.DETACHED, h=1e-5):
    """Central-difference gradient of the artifact loss, one coordinate at a time.

    In detached mode the field output is evaluated once at ``x_t`` and frozen;
    in exact mode it is re-evaluated at every perturbed point.
    """
    if not h > 0:
        raise InputError(f"step h must be positive, got {h}")
    mode = GradMode(mode)
    x_t = np.asarray(x_t, dtype=np.float64)
    frozen = field(x_t, t) if mode is GradMode.DETACHED else None
    g = np.zeros_like(x_t)
    for j in range(x_t.shape[0]):
        e = np.zeros_like(x_t)
        e[j] = h
        fp = loss_at(x_t + e, t, field, decoder, detector, frozen)
        fm = loss_at(x_t - e, t, field, decoder, detector, frozen)
        g[j] = (fp - fm) / (2 * h)
    return g
