"""Random gradient-probe cases shared by the gradient tests and the acceptance suite."""
import numpy as np

from artifact_guidance.detector import DetectorSpec, eval_mask
from artifact_guidance.models import DecoderSpec, MixtureDenoiser, MixtureSpec, MixtureVelocity, decode

H, W = 2, 3


def build(detector_kind, decoder_kind, seed=0):
    rng = np.random.default_rng(seed)
    if decoder_kind == "identity":
        decoder = DecoderSpec("identity", H, W)
    else:
        decoder = DecoderSpec("linear", H, W, rng.normal(size=(H * W, 4)) / 2)
    D = decoder.dim
    mixture = MixtureSpec([0.4, 0.6], [rng.normal(size=D), rng.normal(size=D)], [0.6, 0.4])
    # anchor the artifact regions on decoded mixture means so clean estimates reach them
    near = [decode(mu, decoder).ravel() + 0.3 * rng.normal(size=H * W) for mu in mixture.means]
    radial = DetectorSpec("radial", centers=(near[0],), radii=(1.2,))
    patch = DetectorSpec("patch", centers=(near[1],), radii=(0.9,), window=3)
    detector = {"radial": radial, "patch": patch,
                "composite": DetectorSpec("composite", members=(radial, patch), weights=(0.5, 0.5))}[detector_kind]
    return mixture, decoder, detector


def probes(mixture, decoder, detector, family, n, rng):
    """Yield (x, t) with the clean estimate's mask inside (0.02, 0.98) somewhere."""
    field = MixtureVelocity(mixture) if family == "flow" else MixtureDenoiser(mixture)
    count = 0
    while count < n:
        t = rng.uniform(0.1, 1.0) if family == "flow" else rng.uniform(0.1, 3.0)
        x = rng.normal(scale=1.5, size=mixture.dim)
        m = eval_mask(decode(x - t * field(x, t), decoder), detector).values
        if np.any((m > 0.02) & (m < 0.98)):
            count += 1
            yield field, x, t
