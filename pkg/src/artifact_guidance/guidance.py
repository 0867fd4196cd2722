"""Artifact-aware trajectory correction for flow and diffusion samplers.

At each solver iteration the clean estimate is decoded and scored by the
detector; the gradient of the artifact loss (optionally plus an identity
term toward a baseline image) is normalized, scaled by a power-decaying
strength and subtracted from the plain Euler update.
"""
import csv
import json
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .detector import binarize, eval_mask, mask_jacobian_action
from .diffusion_core import SigmaSchedule, clean_estimate_diffusion, euler_step_diffusion
from .errors import ConfigError, InputError
from .flow_core import LatentState, TimeGrid, clean_estimate_flow, euler_step_flow
from .gradients import GradMode, artifact_loss, pullback
from .models import decode, decode_transpose


@dataclass(frozen=True)
class GuidanceConfig:
    lambda_start: float = 25.0
    lambda_end: float = 1.0
    p: float = 2.0
    tau_start: int = 0
    tau_end: int = 0
    eps: float = 1e-8
    alpha: float = 0.0
    mode: GradMode = GradMode.DETACHED
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", GradMode(self.mode))
        if not self.lambda_start >= self.lambda_end >= 0:
            raise ConfigError("need lambda_start >= lambda_end >= 0")
        if not self.p >= 1:
            raise ConfigError(f"power factor p must be >= 1, got {self.p}")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.tau_start < 0 or self.tau_end < 0:
            raise ConfigError("window offsets must be non-negative")
        if not self.alpha >= 0:
            raise ConfigError("alpha must be non-negative")

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


ZERO_GUIDANCE = GuidanceConfig(lambda_start=0.0, lambda_end=0.0)


@dataclass
class StepRecord:
    i: int
    t: float
    x_t: np.ndarray
    x0_hat: np.ndarray
    mask_max: float
    mask_mean: float
    L_a: float
    delta_norm: float
    lambda_t: float
    corrected: bool

    CSV_COLUMNS = ("i", "t", "L_a", "delta_norm", "lambda_t", "corrected", "mask_max", "mask_mean")


def lambda_schedule(i, N, cfg):
    """Correction strength at solver iteration ``i`` of ``N`` (i=0 is the noisiest step)."""
    if not 0 <= i <= N - 1:
        raise InputError(f"step index {i} outside [0, {N - 1}]")
    if i == 0:
        # exact endpoint; lambda_end + (start - end) can round away from start
        return float(cfg.lambda_start)
    return cfg.lambda_end + (cfg.lambda_start - cfg.lambda_end) * (1.0 - i / (N - 1)) ** cfg.p


def displacement(g, lambda_t, eps, normalize=True):
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise InputError("gradient has non-finite entries")
    if not normalize:
        return lambda_t * g
    return lambda_t * g / (np.linalg.norm(g) + eps)


def correction_window(i, N, tau_start, tau_end):
    """True when iteration ``i`` is neither among the first ``tau_start`` nor the last ``tau_end``."""
    return tau_start <= i <= N - 1 - tau_end


def window_is_empty(N, tau_start, tau_end):
    return tau_start + tau_end >= N


def rec_loss(decoded_x0hat, base_image, mask_na, alpha, lambda_t):
    """alpha * lambda_t * mean |decoded - base| over the non-artifact cells."""
    u, base, na = _rec_inputs(decoded_x0hat, base_image, mask_na)
    if alpha == 0 or not na.any():
        return 0.0
    return float(alpha * lambda_t * np.mean(np.abs(u - base)[na]))


def rec_loss_grad(decoded_x0hat, base_image, mask_na, alpha, lambda_t):
    u, base, na = _rec_inputs(decoded_x0hat, base_image, mask_na)
    n = int(na.sum())
    if alpha == 0 or n == 0:
        return np.zeros_like(u)
    return alpha * lambda_t * np.sign(u - base) * na / n


def _rec_inputs(u, base, na):
    u = np.asarray(u, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    na = np.asarray(na, dtype=bool)
    if not (u.shape == base.shape == na.shape):
        raise InputError(f"shape mismatch: {u.shape}, {base.shape}, {na.shape}")
    return u, base, na


def non_artifact_mask(base_image, detector, threshold=0.5):
    return ~binarize(eval_mask(base_image, detector), threshold)


def _step(x, s, i, N, f, clean, advance, field, decoder, detector, cfg, base_image, mask_na):
    x0_hat = clean(x, f, s)
    u = decode(x0_hat, decoder)
    M = eval_mask(u, detector).values
    L_a = artifact_loss(M)
    x_next = advance(x, f)
    lam = lambda_schedule(i, N, cfg) if cfg is not None else 0.0
    corrected = cfg is not None and correction_window(i, N, cfg.tau_start, cfg.tau_end)
    delta_norm = 0.0
    if corrected:
        cot_u = mask_jacobian_action(u, detector, 2.0 * M / M.size)
        if cfg.alpha > 0 and i >= 1:
            cot_u = cot_u + rec_loss_grad(u, base_image, mask_na, cfg.alpha, lam)
        g = pullback(x, s, field, decode_transpose(cot_u, decoder), cfg.mode)
        delta = displacement(g, lam, cfg.eps, cfg.normalize)
        delta_norm = float(np.linalg.norm(delta))
        x_next = x_next - delta
    rec = StepRecord(i, s, x, x0_hat, float(M.max()), float(M.mean()), L_a, delta_norm, lam, corrected)
    return x_next, rec


def _rec_target(cfg, base_image, detector):
    if cfg is None or cfg.alpha == 0:
        return None, None
    if base_image is None:
        raise ConfigError("alpha > 0 requires a baseline image")
    return np.asarray(base_image, dtype=np.float64), non_artifact_mask(base_image, detector)


def guided_step_flow(state, field, decoder, detector, cfg, grid, i, base_image=None, mask_na=None):
    """One guided Euler step from ``grid.times[i]`` to ``grid.times[i + 1]``.

    ``cfg=None`` runs the plain Euler step but still records the mask.
    """
    if state.t != grid.times[i]:
        raise InputError(f"state time {state.t} does not match grid time {grid.times[i]}")
    if mask_na is None:
        base_image, mask_na = _rec_target(cfg, base_image, detector)
    dt = grid.dt(i)
    f = field(state.x, state.t)
    x_next, rec = _step(state.x, state.t, i, grid.N, f, clean_estimate_flow,
                        lambda x, v: euler_step_flow(x, v, dt), field, decoder, detector,
                        cfg, base_image, mask_na)
    return LatentState(x_next, grid.times[i + 1]), rec


def guided_step_diffusion(state, denoiser, decoder, detector, cfg, schedule, i, base_image=None, mask_na=None):
    """Diffusion analogue of :func:`guided_step_flow`; ``state.t`` carries the noise level."""
    if state.t != schedule.sigmas[i]:
        raise InputError(f"state sigma {state.t} does not match schedule sigma {schedule.sigmas[i]}")
    if mask_na is None:
        base_image, mask_na = _rec_target(cfg, base_image, detector)
    s_next = schedule.sigmas[i + 1]
    f = denoiser(state.x, state.t)
    x_next, rec = _step(state.x, state.t, i, schedule.N, f, clean_estimate_diffusion,
                        lambda x, e: euler_step_diffusion(x, e, state.t, s_next), denoiser,
                        decoder, detector, cfg, base_image, mask_na)
    return LatentState(x_next, s_next), rec


def run_trajectory(x1, family, field, decoder, detector, cfg, grid, base_image=None):
    """Integrate from the initial noise to t=0 (flow) or sigma=0 (diffusion).

    ``grid`` is a :class:`TimeGrid` for ``family="flow"`` or a
    :class:`SigmaSchedule` for ``family="diffusion"``; ``cfg=None`` gives the
    unguided baseline. Returns the final latent and one record per step.
    """
    if family == "flow":
        if not isinstance(grid, TimeGrid):
            raise InputError("flow trajectories need a TimeGrid")
        step, start = guided_step_flow, grid.times[0]
    elif family == "diffusion":
        if not isinstance(grid, SigmaSchedule):
            raise InputError("diffusion trajectories need a SigmaSchedule")
        step, start = guided_step_diffusion, grid.sigmas[0]
    else:
        raise InputError(f"unknown family {family!r}")
    if cfg is not None and window_is_empty(grid.N, cfg.tau_start, cfg.tau_end):
        warnings.warn(f"correction window is empty for N={grid.N}; guidance never fires", stacklevel=2)
    base_image, mask_na = _rec_target(cfg, base_image, detector)
    state = LatentState(np.asarray(x1, dtype=np.float64), start)
    records = []
    for i in range(grid.N):
        state, rec = step(state, field, decoder, detector, cfg, grid, i, base_image, mask_na)
        records.append(rec)
    return state.x, records


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(StepRecord.CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in StepRecord.CSV_COLUMNS])


def dump_latents_json(records, path, final=None):
    data = {"steps": [{"i": r.i, "t": r.t, "x_t": r.x_t.tolist(), "x0_hat": r.x0_hat.tolist()}
                      for r in records]}
    if final is not None:
        data["final"] = np.asarray(final).tolist()
    with open(path, "w") as fh:
        json.dump(data, fh)
