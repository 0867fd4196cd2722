"""Experiment orchestration: seed filtering, paired baseline/guided runs, ablations, reports.

Initial noise comes from a Philox generator keyed by (scenario, prompt, seed),
so a baseline run and every guided variant for the same key start from the
same latent. A "prompt" is just an index that selects an independent noise
stream, mirroring prompt/seed pairs in text-to-image evaluation.
"""
import copy
import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import DetectorSpec, eval_mask, load_detector
from .diffusion_core import make_sigma_schedule
from .errors import ConfigError, InputError
from .flow_core import make_time_grid
from .guidance import GuidanceConfig, dump_latents_json, run_trajectory, write_records_csv
from .metrics import artifact_pixel_ratio, has_artifact, mae_split
from .models import DecoderSpec, MixtureDenoiser, MixtureSpec, MixtureVelocity, decode, load_model

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 1000

# Scheduler ablation rows (lambda_start, lambda_end, p) expressed in the units
# of the reference FLUX.1 [dev] setting, where lambda_start=25 is the default.
LAMBDA_SWEEP_ROWS = [(45, 45, 2), (1, 1, 2), (45, 1, 2), (25, 1, 2), (15, 1, 2), (45, 1, 3), (15, 1, 3)]
ALPHA_SWEEP = [0.0, 0.1, 0.5]


@dataclass
class Scenario:
    name: str
    family: str
    mixture: MixtureSpec
    decoder: DecoderSpec
    detector: DetectorSpec
    guidance: GuidanceConfig
    N: int = 10
    sigma_max: float = 20.0
    sigma_kind: str = "karras"
    learned: object = None
    # one unit of the reference lambda scale (25) in this scenario's latent units
    lambda_unit: float = 1.0 / 25.0

    @property
    def dim(self):
        return self.mixture.dim

    def field(self):
        if self.family == "flow":
            return self.learned if self.learned is not None else MixtureVelocity(self.mixture)
        if self.learned is not None:
            raise ConfigError("learned fields are velocity fields; use family 'flow'")
        return MixtureDenoiser(self.mixture)

    def grid(self):
        if self.family == "flow":
            return make_time_grid(self.N)
        return make_sigma_schedule(self.N, self.sigma_max, self.sigma_kind)


def _two_mode_parts():
    mixture = MixtureSpec([0.5, 0.5], [[-2.0, 0.0], [2.0, 0.0]], [0.5, 0.5])
    decoder = DecoderSpec("identity", 1, 2)
    detector = DetectorSpec("radial", centers=([2.0, 0.0],), radii=(1.0,))
    return mixture, decoder, detector


def grid16_decoder(width=1.5):
    H = W = 16
    yy, xx = np.mgrid[0:H, 0:W]
    pos = [(4.5, 3.5), (4.5, 11.5), (11.5, 3.5), (11.5, 11.5), (8, 1.5), (8, 13.5), (1.5, 8), (13.5, 8)]
    A = np.stack([np.exp(-((yy - a) ** 2 + (xx - b) ** 2) / (2 * width**2)).ravel() for a, b in pos], axis=1)
    return DecoderSpec("linear", H, W, A)


def preset(name):
    """Named desk-scale benchmarks.

    two-mode-2d       flow, 2-D two-mode mixture, identity decoder, radial detector on the right mode
    two-mode-2d-diff  the same target sampled by a Karras-schedule diffusion Euler solver
    grid-16           flow, 8-D latent decoded to 16x16 through Gaussian bumps; the
                      artifact mode over-drives one bump and a patch detector flags it
    """
    if name == "two-mode-2d":
        mixture, decoder, detector = _two_mode_parts()
        cfg = GuidanceConfig(lambda_start=1.0, lambda_end=0.04, p=2, tau_start=0, tau_end=0)
        return Scenario(name, "flow", mixture, decoder, detector, cfg, N=10, lambda_unit=1.0 / 25)
    if name == "two-mode-2d-diff":
        mixture, decoder, detector = _two_mode_parts()
        cfg = GuidanceConfig(lambda_start=3.0, lambda_end=0.12, p=2, tau_start=0, tau_end=0)
        return Scenario(name, "diffusion", mixture, decoder, detector, cfg, N=10,
                        sigma_max=20.0, lambda_unit=3.0 / 25)
    if name == "grid-16":
        decoder = grid16_decoder()
        nominal = np.ones(8)
        artifact = nominal.copy()
        artifact[0] = 3.0
        artifact[1:4] += 0.6
        mixture = MixtureSpec([0.5, 0.5], [artifact, nominal], [0.3, 0.3])
        detector = DetectorSpec("patch", centers=(decode(nominal, decoder).ravel(),), radii=(0.8,))
        cfg = GuidanceConfig(lambda_start=2.0, lambda_end=0.08, p=2, tau_start=0, tau_end=0)
        return Scenario(name, "flow", mixture, decoder, detector, cfg, N=10, lambda_unit=2.0 / 25)
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("two-mode-2d", "two-mode-2d-diff", "grid-16")


# -- noise and single runs --------------------------------------------------


def noise_key(scenario_name, prompt, seed):
    digest = hashlib.blake2b(f"{scenario_name}|{prompt}|{seed}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def initial_noise(scenario, prompt, seed):
    rng = np.random.Generator(np.random.Philox(key=noise_key(scenario.name, prompt, seed)))
    z = rng.standard_normal(scenario.dim)
    return z if scenario.family == "flow" else scenario.sigma_max * z


def sample(scenario, x1, cfg=None, base_image=None):
    """Run one trajectory; returns (final latent, decoded image, mask, records)."""
    final, records = run_trajectory(x1, scenario.family, scenario.field(), scenario.decoder,
                                    scenario.detector, cfg, scenario.grid(), base_image)
    image = decode(final, scenario.decoder)
    return final, image, eval_mask(image, scenario.detector), records


@dataclass
class SeedRecord:
    scenario: str
    prompt: int
    seed: int
    attempts: int
    accepted: bool


def filter_seeds(scenario, start_seed, max_attempts=MAX_ATTEMPTS, prompt=0):
    """Find the first seed from ``start_seed`` whose baseline output holds an artifact.

    A cell must exceed 0.5 strictly. On exhaustion the returned record has
    ``accepted=False`` and ``attempts == max_attempts``.
    """
    if max_attempts < 1 or max_attempts > MAX_ATTEMPTS:
        raise InputError(f"max_attempts must be in [1, {MAX_ATTEMPTS}]")
    for k in range(max_attempts):
        seed = start_seed + k
        _, _, mask, _ = sample(scenario, initial_noise(scenario, prompt, seed))
        if np.any(mask.values > 0.5):
            return SeedRecord(scenario.name, prompt, seed, k + 1, True)
    return SeedRecord(scenario.name, prompt, start_seed + max_attempts - 1, max_attempts, False)


# -- experiment config ------------------------------------------------------


@dataclass
class ExperimentConfig:
    preset: str = "two-mode-2d"
    family: str = None
    model: str = None
    detector: str = None
    decoder: str = None
    guidance: dict = field(default_factory=dict)
    N: int = None
    sigma_max: float = None
    seed_groups: list = field(default_factory=lambda: [4000])
    prompts: int = 1
    seeds: list = None
    filter: bool = True
    ablation: dict = field(default_factory=dict)
    out: str = None
    write_trajectories: bool = True

    def __post_init__(self):
        if self.N is not None and self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.prompts < 1 or len(self.seed_groups) < 1:
            raise ConfigError("need at least one prompt and one seed group")
        if self.seeds is not None and len(self.seeds) < 1:
            raise ConfigError("explicit seed list is empty")
        unknown = set(self.ablation) - {"lambda_sweep", "alpha_sweep", "norm_onoff"}
        if unknown:
            raise ConfigError(f"unknown ablation keys {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def scenario(self):
        sc = preset(self.preset)
        if self.model:
            _require(self.model)
            sc.mixture, sc.learned = load_model(self.model)
        if self.detector:
            _require(self.detector)
            sc.detector = load_detector(self.detector)
        if self.decoder:
            _require(self.decoder)
            with open(self.decoder) as fh:
                sc.decoder = DecoderSpec.from_dict(json.load(fh))
        if self.family:
            sc.family = self.family
        if self.N is not None:
            sc.N = int(self.N)
        if self.sigma_max is not None:
            sc.sigma_max = float(self.sigma_max)
        if self.guidance:
            sc.guidance = sc.guidance.with_(**self.guidance)
        if sc.family not in ("flow", "diffusion"):
            raise ConfigError(f"unknown family {sc.family!r}")
        if sc.decoder.dim != sc.dim:
            raise ConfigError(f"decoder expects dimension {sc.decoder.dim}, model has {sc.dim}")
        return sc

    def variants(self, sc):
        """Ordered mapping of variant name -> GuidanceConfig (None = baseline)."""
        out = {"baseline": None, "guided": sc.guidance}
        ab = self.ablation
        if ab.get("norm_onoff"):
            out["guided_nonorm"] = sc.guidance.with_(normalize=False)
        if ab.get("alpha_sweep"):
            alphas = ALPHA_SWEEP if ab["alpha_sweep"] is True else ab["alpha_sweep"]
            for a in alphas:
                out[f"alpha_{float(a):g}"] = sc.guidance.with_(alpha=float(a))
        if ab.get("lambda_sweep"):
            rows = LAMBDA_SWEEP_ROWS if ab["lambda_sweep"] is True else ab["lambda_sweep"]
            for ls, le, p in rows:
                out[f"lambda_{ls:g}_{le:g}_{p:g}"] = sc.guidance.with_(
                    lambda_start=ls * sc.lambda_unit, lambda_end=le * sc.lambda_unit, p=p)
        return out


def _require(path):
    if not Path(path).is_file():
        raise ConfigError(f"referenced spec file {path} does not exist")


def threads():
    env = os.environ.get("DIAMOND_THREADS")
    if env:
        return max(1, int(env))
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _pool_map(fn, tasks):
    n = min(threads(), len(tasks))
    if n <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * n))))


def _seed_tasks(cfg):
    tasks = []
    for g, start in enumerate(cfg.seed_groups):
        for prompt in range(cfg.prompts):
            if cfg.seeds is not None:
                tasks.append((g, prompt, int(cfg.seeds[(g * cfg.prompts + prompt) % len(cfg.seeds)])))
            else:
                tasks.append((g, prompt, int(start)))
    return tasks


def _filter_task(args):
    sc, g, prompt, start = args
    return g, filter_seeds(sc, start, prompt=prompt)


def collect_seeds(cfg, sc=None):
    """Resolve (group, prompt, seed) triples, running the artifact filter when enabled."""
    sc = sc or cfg.scenario()
    tasks = _seed_tasks(cfg)
    if not cfg.filter:
        return [(g, SeedRecord(sc.name, p, s, 0, True)) for g, p, s in tasks]
    return _pool_map(_filter_task, [(sc, g, p, s) for g, p, s in tasks])


def _run_seed(args):
    sc, variants, g, rec = args
    x1 = initial_noise(sc, rec.prompt, rec.seed)
    result = {"group": g, "prompt": rec.prompt, "seed": rec.seed, "rows": [], "records": {}, "finals": {}}
    try:
        b_final, b_img, b_mask, b_recs = sample(sc, x1)
        for name, vcfg in variants.items():
            if vcfg is None:
                final, img, mask, recs = b_final, b_img, b_mask, b_recs
            else:
                final, img, mask, recs = sample(sc, x1, vcfg, base_image=b_img)
            mae, mae_a, mae_na = mae_split(img, b_img, b_mask)
            result["rows"].append({"variant": name, "group": g, "prompt": rec.prompt, "seed": rec.seed,
                                   "artifact": int(has_artifact(mask)), "apr": artifact_pixel_ratio(mask),
                                   "mae": mae, "mae_a": mae_a, "mae_na": mae_na,
                                   "mask_max": float(mask.values.max())})
            result["records"][name] = recs
            result["finals"][name] = final.tolist()
    except Exception as exc:  # one bad seed must not sink the experiment
        logger.error("seed %s (group %d, prompt %d) failed: %r", rec.seed, g, rec.prompt, exc)
        result["error"] = repr(exc)
    return result


# -- aggregation ------------------------------------------------------------

METRIC_COLUMNS = ("variant", "group", "prompt", "seed", "artifact", "apr", "mae", "mae_a", "mae_na", "mask_max")


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def group_metrics(rows):
    """Per-group summary of one variant's rows (MAF and APR in percent)."""
    return {"n": len(rows),
            "maf": 100.0 * float(np.mean([r["artifact"] for r in rows])),
            "apr_mean": float(np.mean([r["apr"] for r in rows])),
            "mae": _mean(r["mae"] for r in rows),
            "mae_a": _mean(r["mae_a"] for r in rows),
            "mae_na": _mean(r["mae_na"] for r in rows)}


def aggregate(rows):
    """Mean and sample standard deviation of each metric across seed groups."""
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    out = {}
    for v in variants:
        vrows = [r for r in rows if r["variant"] == v]
        groups = sorted({r["group"] for r in vrows})
        per_group = [group_metrics([r for r in vrows if r["group"] == g]) for g in groups]
        summary = {"n": len(vrows), "groups": len(groups)}
        for m in ("maf", "apr_mean", "mae", "mae_a", "mae_na"):
            vals = [pg[m] for pg in per_group if pg[m] is not None]
            summary[m] = {"mean": float(np.mean(vals)) if vals else None,
                          "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else None}
        summary["per_group"] = per_group
        out[v] = summary
    return out


def seed_list_hash(seed_records):
    text = ";".join(f"{g}:{r.prompt}:{r.seed}" for g, r in seed_records)
    return hashlib.sha256(text.encode()).hexdigest()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def traj_filename(group, prompt, seed, variant):
    return f"traj_g{group}p{prompt}s{seed}_{variant}.csv"


def run_experiment(cfg, out=None):
    """Run every seed and variant, write reports under ``out`` and return the report dict.

    Files: ``report.json``, ``metrics.csv`` (one row per seed per variant),
    ``traj_<key>_<variant>.csv`` per trajectory, ``seeds.csv``.
    """
    out = Path(out or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario()
    variants = cfg.variants(sc)
    seeds = collect_seeds(cfg, sc)
    write_seeds_csv(seeds, out / "seeds.csv")
    accepted = [(g, r) for g, r in seeds if r.accepted]
    failures = [{"group": g, "prompt": r.prompt, "reason": "no artifact seed within attempt budget"}
                for g, r in seeds if not r.accepted]
    results = _pool_map(_run_seed, [(sc, variants, g, r) for g, r in accepted])
    results.sort(key=lambda res: (res["group"], res["prompt"], res["seed"]))

    rows, trajectories, endpoints = [], [], []
    order = {v: k for k, v in enumerate(variants)}
    for res in results:
        if "error" in res:
            failures.append({"group": res["group"], "prompt": res["prompt"], "seed": res["seed"],
                             "reason": res["error"]})
            continue
        rows.extend(res["rows"])
        for name, recs in res["records"].items():
            fname = traj_filename(res["group"], res["prompt"], res["seed"], name)
            if cfg.write_trajectories:
                write_records_csv(recs, out / fname)
                trajectories.append({"variant": name, "group": res["group"], "prompt": res["prompt"],
                                     "seed": res["seed"], "file": fname})
            endpoints.append({"variant": name, "group": res["group"], "prompt": res["prompt"],
                              "seed": res["seed"], "x": res["finals"][name]})
    rows.sort(key=lambda r: (order[r["variant"]], r["group"], r["prompt"], r["seed"]))
    write_metrics_csv(rows, out / "metrics.csv")

    report = {"scenario": sc.name, "family": sc.family, "N": sc.N,
              "guidance": sc.guidance.to_dict(), "config": cfg.to_dict(),
              "seed_list_hash": seed_list_hash(accepted), "n": len(accepted),
              "variants": aggregate(rows), "failures": failures,
              "trajectories": trajectories, "endpoints": endpoints,
              "complete": not failures}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return report


def write_seeds_csv(seeds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("group", "scenario", "prompt", "seed", "attempts", "accepted"))
        for g, r in seeds:
            w.writerow((g, r.scenario, r.prompt, r.seed, r.attempts, int(r.accepted)))


SERIES_COLUMNS = ("variant", "group", "prompt", "seed", "i", "t", "L_a", "delta_norm", "lambda_t")


def emit_plot_data(report_dir):
    """Flatten a report directory into ``series.csv`` and ``endpoints.csv`` for plotting."""
    report_dir = Path(report_dir)
    path = report_dir / "report.json"
    if not path.is_file():
        raise InputError(f"no report found at {path}")
    with open(path) as fh:
        report = json.load(fh)
    with open(report_dir / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for tr in report.get("trajectories", []):
            with open(report_dir / tr["file"], newline="") as tf:
                for row in csv.DictReader(tf):
                    w.writerow([tr["variant"], tr["group"], tr["prompt"], tr["seed"],
                                row["i"], row["t"], row["L_a"], row["delta_norm"], row["lambda_t"]])
    endpoints = report.get("endpoints", [])
    dim = len(endpoints[0]["x"]) if endpoints else 0
    with open(report_dir / "endpoints.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant", "group", "prompt", "seed", *[f"x{k}" for k in range(dim)]))
        for e in endpoints:
            w.writerow([e["variant"], e["group"], e["prompt"], e["seed"], *[repr(float(v)) for v in e["x"]]])
    return report_dir / "series.csv", report_dir / "endpoints.csv"
