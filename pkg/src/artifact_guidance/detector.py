"""Synthetic differentiable artifact detectors over decoded grids.

A detector maps an H x W decoded grid to per-cell artifact probabilities and
exposes the transpose of its Jacobian. Three kinds are built in:

``radial``
    Artifact regions are balls around ``centers`` in the full decoded space.
    Every cell reports ``sigmoid(k * (radius - ||u - c||))``; several centers
    combine as a probabilistic union ``1 - prod(1 - p_m)``.
``patch``
    Each cell looks at the mean squared deviation from a reference pattern
    over a ``window x window`` neighbourhood and reports
    ``sigmoid(k * (d_ij - radius))``: cells whose neighbourhood departs from
    the reference by more than ``radius`` are artifacts.
``composite``
    Weighted mean of member detector masks, in probability space.
"""
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InputError

_ETA2 = 1e-24  # keeps the distance differentiable at zero


@dataclass(frozen=True)
class DetectorSpec:
    kind: str
    centers: tuple = ()
    radii: tuple = ()
    sharpness: tuple = None
    weights: tuple = ()
    members: tuple = ()
    window: int = 3

    def __post_init__(self):
        if self.kind not in ("radial", "patch", "composite"):
            raise InputError(f"unknown detector kind {self.kind!r}")
        if self.kind == "composite":
            w = np.asarray(self.weights, dtype=np.float64)
            if len(self.members) == 0 or len(w) != len(self.members):
                raise InputError("composite detector needs one weight per member")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise InputError("composite weights must be non-negative and sum to 1")
            object.__setattr__(self, "weights", tuple(w))
            object.__setattr__(self, "members", tuple(self.members))
            return
        centers = tuple(np.asarray(c, dtype=np.float64).reshape(-1) for c in self.centers)
        radii = np.broadcast_to(np.asarray(self.radii, dtype=np.float64), (len(centers),)).copy()
        if np.any(radii <= 0):
            raise InputError("radii must be positive")
        if self.sharpness is None:
            sharp = 10.0 / radii
        else:
            sharp = np.broadcast_to(np.asarray(self.sharpness, dtype=np.float64), (len(centers),)).copy()
        if np.any(sharp <= 0):
            raise InputError("sharpness must be positive")
        if self.kind == "patch" and (self.window < 1 or self.window % 2 == 0):
            raise InputError("patch window must be a positive odd integer")
        for c in centers:
            c.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", tuple(radii))
        object.__setattr__(self, "sharpness", tuple(sharp))

    def to_dict(self):
        if self.kind == "composite":
            return {"kind": "composite", "weights": list(self.weights),
                    "members": [m.to_dict() for m in self.members]}
        d = {"kind": self.kind, "centers": [c.tolist() for c in self.centers],
             "radii": list(self.radii), "sharpness": list(self.sharpness)}
        if self.kind == "patch":
            d["window"] = self.window
        return d

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "composite":
            return cls("composite", weights=tuple(d["weights"]),
                       members=tuple(cls.from_dict(m) for m in d["members"]))
        return cls(d["kind"], centers=tuple(d["centers"]), radii=tuple(np.atleast_1d(d["radii"])),
                   sharpness=None if d.get("sharpness") is None else tuple(np.atleast_1d(d["sharpness"])),
                   window=int(d.get("window", 3)))


def load_detector(path_or_dict):
    d = path_or_dict
    if not isinstance(d, dict):
        with open(d) as fh:
            d = json.load(fh)
    return DetectorSpec.from_dict(d)


@dataclass(frozen=True)
class ArtifactMask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError("artifact mask must be a 2-D grid")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise InputError("artifact mask entries must be finite and within [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def _sigmoid(z):
    # split by sign so neither branch overflows; output stays in [0, 1]
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@lru_cache(maxsize=32)
def _box_matrix(H, W, window):
    """Dense (HW, HW) neighbourhood-averaging operator with zero padding."""
    n = H * W
    B = np.zeros((n, n))
    h = window // 2
    for i in range(H):
        for j in range(W):
            for di in range(-h, h + 1):
                for dj in range(-h, h + 1):
                    a, b = i + di, j + dj
                    if 0 <= a < H and 0 <= b < W:
                        B[i * W + j, a * W + b] = 1.0 / window**2
    B.setflags(write=False)
    return B


def _grid(decoded):
    u = np.asarray(decoded, dtype=np.float64)
    if u.ndim != 2:
        raise InputError(f"decoded input must be an H x W grid, got shape {u.shape}")
    return u


def _check_center(c, n):
    if c.shape[0] != n:
        raise InputError(f"detector center has {c.shape[0]} entries, decoded grid has {n} cells")


def _member_probs(u, spec):
    """Per-center probability grids and their local derivatives.

    radial: returns p (M,) scalars and dp/du (M, n)
    patch:  returns p (M, n) and the pieces needed for the adjoint
    """
    flat = u.reshape(-1)
    n = flat.shape[0]
    if spec.kind == "radial":
        ps, dps = [], []
        for c, r, k in zip(spec.centers, spec.radii, spec.sharpness):
            _check_center(c, n)
            diff = flat - c
            d = np.sqrt(diff @ diff + _ETA2)
            p = _sigmoid(np.array([k * (r - d)]))[0]
            ps.append(p)
            dps.append(-k * p * (1.0 - p) * diff / d)
        return np.array(ps), np.array(dps)
    B = _box_matrix(u.shape[0], u.shape[1], spec.window)
    ps, aux = [], []
    for c, r, k in zip(spec.centers, spec.radii, spec.sharpness):
        _check_center(c, n)
        diff = flat - c
        d = np.sqrt(B @ diff**2 + _ETA2)
        p = _sigmoid(k * (d - r))
        ps.append(p)
        aux.append((diff, d, k))
    return np.array(ps), aux


def _union(ps):
    """1 - prod(1 - p_m) along axis 0, plus d(union)/dp_m."""
    q = 1.0 - ps
    total = 1.0 - np.prod(q, axis=0)
    others = np.empty_like(ps)
    for m in range(ps.shape[0]):
        others[m] = np.prod(np.delete(q, m, axis=0), axis=0)
    return total, others


def eval_mask(decoded, spec):
    u = _grid(decoded)
    if spec.kind == "composite":
        return combine_masks([eval_mask(u, m) for m in spec.members], spec.weights)
    if not spec.centers:
        return ArtifactMask(np.zeros_like(u))
    ps, _ = _member_probs(u, spec)
    total, _ = _union(ps)
    if spec.kind == "radial":
        return ArtifactMask(np.full(u.shape, total))
    return ArtifactMask(total.reshape(u.shape))


def combine_masks(masks, weights):
    weights = np.asarray(weights, dtype=np.float64)
    vals = [m.values if isinstance(m, ArtifactMask) else np.asarray(m, dtype=np.float64) for m in masks]
    out = sum(w * v for w, v in zip(weights, vals))
    # rounding can push a convex combination of values in [0, 1] a hair outside
    return ArtifactMask(np.clip(out, 0.0, 1.0))


def mask_jacobian_action(decoded, spec, cotangent):
    """Return ``J^T @ cotangent`` for ``J = d mask / d decoded`` (both H x W grids)."""
    u = _grid(decoded)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != u.shape:
        raise InputError(f"cotangent shape {cot.shape} does not match grid {u.shape}")
    if spec.kind == "composite":
        return sum(w * mask_jacobian_action(u, m, cot) for w, m in zip(spec.weights, spec.members))
    if not spec.centers:
        return np.zeros_like(u)
    ps, extra = _member_probs(u, spec)
    _, others = _union(ps)
    if spec.kind == "radial":
        # every cell holds the same scalar, so the cotangent collapses to its sum
        g = cot.sum() * (others @ extra)
        return g.reshape(u.shape)
    B = _box_matrix(u.shape[0], u.shape[1], spec.window)
    c = cot.reshape(-1)
    g = np.zeros(c.shape[0])
    for m, (diff, d, k) in enumerate(extra):
        dp_dd = k * ps[m] * (1.0 - ps[m])
        w = c * others[m] * dp_dd / (2.0 * d)
        g += 2.0 * diff * (B.T @ w)
    return g.reshape(u.shape)


def binarize(mask, threshold=0.5):
    vals = mask.values if isinstance(mask, ArtifactMask) else np.asarray(mask, dtype=np.float64)
    return vals >= threshold
