# Power-schedule shapes and their effect on the two-mode benchmark.
#
# Rows are given in units of the reference setting (lambda_start = 25) and
# rescaled to the benchmark's latent units.
import tempfile

from artifact_guidance.guidance import GuidanceConfig, lambda_schedule
from artifact_guidance.harness import ExperimentConfig, run_experiment

for ls, le, p in [(25, 1, 2), (25, 1, 3), (40, 1, 4)]:
    cfg = GuidanceConfig(ls, le, p)
    print(f"{ls}->{le}, p={p}:", [round(lambda_schedule(i, 10, cfg), 2) for i in range(10)])

cfg = ExperimentConfig(preset="two-mode-2d", prompts=25, seed_groups=[4000, 40000], write_trajectories=False,
                       ablation={"lambda_sweep": True})
with tempfile.TemporaryDirectory() as out:
    report = run_experiment(cfg, out)
print()
for name, v in report["variants"].items():
    mae = v["mae"]["mean"]
    print(f"{name:<18} MAF {v['maf']['mean']:6.1f}%   MAE {mae if mae is None else round(mae, 3)}")
