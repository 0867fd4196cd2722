"""Command-line entry point: ``artguide {filter-seeds,run,emit-plots,train-field}``.

Configuration is one JSON file (``--config``) plus ``--set key=value``
overrides; dotted keys reach into nested objects (``--set guidance.alpha=0.1``).
Values are parsed as JSON when possible, otherwise kept as strings.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, InputError
from .harness import ExperimentConfig, collect_seeds, emit_plot_data, run_experiment, write_seeds_csv
from .models import load_model, save_model, train_mlp_velocity

log = logging.getLogger("artguide")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d, pairs):
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        node = d
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = _parse_value(value)
    return d


def load_config(path, overrides):
    d = {}
    if path:
        with open(path) as fh:
            d = json.load(fh)
    return apply_overrides(d, overrides)


def cmd_filter_seeds(args, d):
    cfg = ExperimentConfig.from_dict(d)
    seeds = collect_seeds(cfg)
    write_seeds_csv(seeds, args.out / "seeds.csv")
    ok = all(r.accepted for _, r in seeds)
    log.info("%d/%d prompts found an artifact seed", sum(r.accepted for _, r in seeds), len(seeds))
    return 0 if ok else 1


def cmd_run(args, d):
    report = run_experiment(ExperimentConfig.from_dict(d), args.out)
    for name, v in report["variants"].items():
        log.info("%-22s MAF %7.3f  APR %7.3f  n=%d", name, v["maf"]["mean"], v["apr_mean"]["mean"], v["n"])
    return 0 if report["complete"] else 1


def cmd_emit_plots(args, d):
    source = Path(d.get("report", args.out))
    for path in emit_plot_data(source):
        log.info("wrote %s", path)
    return 0


def cmd_train_field(args, d):
    if "model" in d:
        spec, _ = load_model(d["model"])
    else:
        from .harness import preset
        spec = preset(d.get("preset", "two-mode-2d")).mixture
    net = train_mlp_velocity(spec, widths=tuple(d.get("widths", (64, 64))), steps=int(d.get("steps", 2000)),
                             lr=float(d.get("lr", 3e-3)), seed=int(d.get("seed", 0)))
    save_model(args.out / "field.json", spec, net)
    with open(args.out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "loss"))
        for k, loss in enumerate(net.loss_history, 1):
            w.writerow((k, repr(loss)))
    log.info("final loss %.6f", net.loss_history[-1])
    return 0


COMMANDS = {"filter-seeds": cmd_filter_seeds, "run": cmd_run,
            "emit-plots": cmd_emit_plots, "train-field": cmd_train_field}


def build_parser():
    parser = argparse.ArgumentParser(prog="artguide", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[])
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        d = load_config(args.config, args.set)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, d)
    except (ConfigError, InputError, OSError, json.JSONDecodeError, TypeError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
