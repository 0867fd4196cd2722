"""Ground-truth generative fields and decoders.

The data distribution is an isotropic Gaussian mixture, so both the
rectified-flow velocity ``E[x1 - x0 | x_t]`` and the diffusion noise
prediction ``(x - E[x0 | x]) / sigma`` have closed forms. Each field also
exposes a vector-Jacobian product so gradients can be propagated through it.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, SingularityError, TrainingError
from .flow_core import _vec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixtureSpec:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        s = np.asarray(self.stds, dtype=np.float64).reshape(-1)
        if not (len(w) == mu.shape[0] == len(s)) or len(w) == 0:
            raise InputError("weights, means and stds must describe the same K >= 1 components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError("mixture weights must be non-negative and sum to 1")
        if np.any(s < 0) or not np.all(np.isfinite(mu)):
            raise InputError("stds must be >= 0 and means finite")
        for name, val in (("weights", w), ("means", mu), ("stds", s)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def K(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def has_point_mass(self):
        return bool(np.any(self.stds == 0))

    def sample(self, n, rng):
        comp = rng.choice(self.K, size=n, p=self.weights)
        return self.means[comp] + self.stds[comp, None] * rng.standard_normal((n, self.dim))

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["means"], d["stds"])


def _softmax_logs(logits):
    logits = logits - logits.max()
    r = np.exp(logits)
    return r / r.sum()


def _responsibilities(x, centers, variances, log_weights):
    """Posterior component probabilities and the per-component score terms.

    Returns ``r`` (K,) and ``u`` (K, D) with ``u_k = -(x - c_k)/var_k``, the
    gradient of each component's log-density.
    """
    D = x.shape[0]
    diff = x[None, :] - centers
    with np.errstate(divide="ignore"):
        logits = log_weights - 0.5 * D * np.log(2 * np.pi * variances) - 0.5 * np.sum(diff**2, axis=1) / variances
    return _softmax_logs(logits), -diff / variances[:, None]


def _mixture_jacobian(r, means_k, slopes, u):
    # d/dx sum_k r_k(x) f_k(x), with f_k = slope_k * x + const and dr_k/dx = r_k (u_k - u_bar)
    D = u.shape[1]
    u_bar = r @ u
    return (r @ slopes) * np.eye(D) + (r[:, None] * means_k).T @ (u - u_bar)


def mixture_velocity(x, t, spec):
    return _velocity_terms(_vec(x), t, spec)[0]


def mixture_velocity_jacobian(x, t, spec):
    v, r, vk, c, u = _velocity_terms(_vec(x), t, spec)
    return _mixture_jacobian(r, vk, c, u)


def _velocity_terms(x, t, spec):
    t = float(t)
    if x.shape[0] != spec.dim:
        raise InputError(f"x has dimension {x.shape[0]}, mixture has {spec.dim}")
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t must lie in [0, 1], got {t}")
    s2 = spec.stds**2
    var = (1.0 - t) ** 2 * s2 + t**2
    if np.any(var == 0):
        raise SingularityError("velocity of a point-mass component is undefined at t=0")
    centers = (1.0 - t) * spec.means
    with np.errstate(divide="ignore"):
        logw = np.log(spec.weights)
    r, u = _responsibilities(x, centers, var, logw)
    # per-component E[x1 - x0 | x_t=x, k] is affine in x with slope c_k
    c = (t - (1.0 - t) * s2) / var
    vk = c[:, None] * (x[None, :] - centers) - spec.means
    return r @ vk, r, vk, c, u


def mixture_denoiser(x, sigma, spec):
    return _denoiser_terms(_vec(x), sigma, spec)[0]


def mixture_denoiser_jacobian(x, sigma, spec):
    eps, r, mk, b, u, sigma = _denoiser_terms(_vec(x), sigma, spec)
    Jm = _mixture_jacobian(r, mk, b, u)
    return (np.eye(x.shape[0]) - Jm) / sigma


def _denoiser_terms(x, sigma, spec):
    sigma = float(sigma)
    if x.shape[0] != spec.dim:
        raise InputError(f"x has dimension {x.shape[0]}, mixture has {spec.dim}")
    if sigma < 0:
        raise InputError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        raise SingularityError("noise prediction is undefined at sigma=0")
    s2 = spec.stds**2
    var = s2 + sigma**2
    with np.errstate(divide="ignore"):
        logw = np.log(spec.weights)
    r, u = _responsibilities(x, spec.means, var, logw)
    b = s2 / var
    mk = spec.means + b[:, None] * (x[None, :] - spec.means)
    return (x - r @ mk) / sigma, r, mk, b, u, sigma


class MixtureVelocity:
    """Exact velocity field ``v(x, t)`` for a mixture target and standard normal noise."""

    def __init__(self, spec):
        self.spec = spec

    def __call__(self, x, t):
        return mixture_velocity(x, t, self.spec)

    def vjp(self, x, t, cotangent):
        return mixture_velocity_jacobian(x, t, self.spec).T @ cotangent


class MixtureDenoiser:
    """Exact noise prediction ``eps(x, sigma)`` for a mixture target."""

    def __init__(self, spec):
        self.spec = spec

    def __call__(self, x, sigma):
        return mixture_denoiser(x, sigma, self.spec)

    def vjp(self, x, sigma, cotangent):
        return mixture_denoiser_jacobian(x, sigma, self.spec).T @ cotangent


# -- decoders ---------------------------------------------------------------


@dataclass(frozen=True)
class DecoderSpec:
    kind: str
    H: int
    W: int
    matrix: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("identity", "linear"):
            raise InputError(f"unknown decoder kind {self.kind!r}")
        if self.kind == "linear":
            A = np.asarray(self.matrix, dtype=np.float64)
            if A.ndim != 2 or A.shape[0] != self.H * self.W:
                raise InputError(f"linear decoder matrix must be (H*W, D), got {A.shape}")
            if not np.all(np.isfinite(A)):
                raise InputError("decoder matrix has non-finite entries")
            A.setflags(write=False)
            object.__setattr__(self, "matrix", A)

    @property
    def dim(self):
        return self.H * self.W if self.kind == "identity" else self.matrix.shape[1]

    @property
    def shape(self):
        return (self.H, self.W)

    def to_dict(self):
        d = {"kind": self.kind, "H": self.H, "W": self.W}
        if self.kind == "linear":
            d["matrix"] = self.matrix.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["H"]), int(d["W"]), d.get("matrix"))


def decode(x0_hat, spec):
    x = _vec(x0_hat, "x0_hat")
    if x.shape[0] != spec.dim:
        raise InputError(f"decoder expects dimension {spec.dim}, got {x.shape[0]}")
    if spec.kind == "identity":
        return x.reshape(spec.H, spec.W).copy()
    return (spec.matrix @ x).reshape(spec.H, spec.W)


def decode_transpose(cotangent, spec):
    """Adjoint of ``decode``: maps an H x W cotangent grid back to latent space."""
    c = np.asarray(cotangent, dtype=np.float64)
    if c.shape != spec.shape:
        raise InputError(f"cotangent grid must have shape {spec.shape}, got {c.shape}")
    if spec.kind == "identity":
        return c.reshape(-1).copy()
    return spec.matrix.T @ c.reshape(-1)


# -- learned field ----------------------------------------------------------


@dataclass
class MLPVelocity:
    """Tanh MLP taking ``[x, t]`` and returning a velocity in R^D."""

    weights: list
    biases: list
    loss_history: list = field(default_factory=list)

    @property
    def dim(self):
        return self.weights[-1].shape[0]

    def _forward(self, X):
        acts = [X]
        h = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < len(self.weights) - 1:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def _backward(self, acts, g_out):
        """Back-propagate ``g_out``; returns (input cotangent, weight grads, bias grads)."""
        gW, gb = [], []
        g = g_out
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            gW.append(g.T @ acts[i])
            gb.append(g.sum(axis=0))
            g = g @ self.weights[i]
        return g, gW[::-1], gb[::-1]

    def __call__(self, x, t):
        x = _vec(x)
        return self._forward(np.append(x, float(t))[None, :])[-1][0]

    def batch(self, X, t):
        X = np.atleast_2d(X)
        T = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (X.shape[0], 1))
        return self._forward(np.hstack([X, T]))[-1]

    def vjp(self, x, t, cotangent):
        acts = self._forward(np.append(_vec(x), float(t))[None, :])
        g_in, _, _ = self._backward(acts, np.asarray(cotangent, dtype=np.float64)[None, :])
        return g_in[0, :-1]

    def to_dict(self):
        return {"layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(self.weights, self.biases)]}

    @classmethod
    def from_dict(cls, d):
        layers = d["layers"]
        return cls([np.asarray(L["W"], dtype=np.float64) for L in layers],
                   [np.asarray(L["b"], dtype=np.float64) for L in layers])


def train_mlp_velocity(spec, widths=(64, 64), steps=2000, lr=3e-3, seed=0, batch_size=256):
    """Fit an MLP velocity field by conditional flow matching against ``spec``.

    Each step draws ``x0`` from the mixture, ``x1`` from a standard normal and
    ``t`` uniformly, then regresses ``v(x_t, t)`` onto ``x1 - x0`` with Adam.
    Deterministic for a fixed seed. The per-step loss is kept in
    ``loss_history``.
    """
    if int(steps) != steps or steps < 1:
        raise InputError(f"steps must be a positive integer, got {steps}")
    rng = np.random.default_rng(seed)
    D = spec.dim
    sizes = [D + 1, *widths, D]
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    net = MLPVelocity(weights, biases)

    params = net.weights + net.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    for step in range(1, int(steps) + 1):
        x0 = spec.sample(batch_size, rng)
        x1 = rng.standard_normal((batch_size, D))
        t = rng.uniform(0.0, 1.0, size=(batch_size, 1))
        xt = (1.0 - t) * x0 + t * x1
        acts = net._forward(np.hstack([xt, t]))
        resid = acts[-1] - (x1 - x0)
        loss = float(np.mean(np.sum(resid**2, axis=1)))
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at step {step}")
        net.loss_history.append(loss)
        _, gW, gb = net._backward(acts, 2.0 * resid / batch_size)
        for k, g in enumerate(gW + gb):
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1**step)
            vhat = v[k] / (1 - b2**step)
            params[k] -= lr * mhat / (np.sqrt(vhat) + adam_eps)
        if step % 500 == 0:
            logger.debug("step %d loss %.5f", step, loss)
    return net


# -- serialization ----------------------------------------------------------


def load_model(path_or_dict):
    """Read a model JSON: a mixture (weights/means/stds), optionally with learned ``layers``.

    Returns ``(spec, field)`` where ``field`` is the MLP when layers are present,
    otherwise ``None`` (use the analytic field built from ``spec``).
    """
    d = path_or_dict
    if not isinstance(d, dict):
        with open(d) as fh:
            d = json.load(fh)
    spec = MixtureSpec.from_dict(d)
    net = MLPVelocity.from_dict(d) if "layers" in d else None
    return spec, net


def save_model(path, spec, net=None):
    d = spec.to_dict()
    if net is not None:
        d.update(net.to_dict())
    with open(path, "w") as fh:
        json.dump(d, fh)
