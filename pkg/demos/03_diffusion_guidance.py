# The same correction on a sigma-parameterized diffusion sampler.
#
# The clean estimate is x - sigma * eps(x, sigma) and the plain update is
# x - (sigma - sigma_next) * eps; the displacement is subtracted on top.
import numpy as np

from artifact_guidance.harness import filter_seeds, initial_noise, preset, sample
from artifact_guidance.metrics import mean_artifact_freq

sc = preset("two-mode-2d-diff")
sigmas = sc.grid().sigmas
print("Karras sigmas:", np.round(sigmas, 3))

records = [filter_seeds(sc, 4000, prompt=p) for p in range(20)]
base, guided = [], []
for rec in records:
    x1 = initial_noise(sc, rec.prompt, rec.seed)
    base.append(sample(sc, x1)[2])
    final, _, mask, steps = sample(sc, x1, sc.guidance)
    guided.append(mask)
print(f"MAF baseline {mean_artifact_freq(base):.1f}%  guided {mean_artifact_freq(guided):.1f}%")
print("last trajectory:")
for r in steps:
    print(f"  sigma={r.t:7.3f}  x0_hat={np.round(r.x0_hat, 2)}  mask_max={r.mask_max:.3f}  |delta|={r.delta_norm:.3f}")
