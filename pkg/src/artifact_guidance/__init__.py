"""Inference-time artifact correction for rectified-flow and diffusion samplers.

Desk-scale building blocks: analytic Gaussian-mixture generative fields,
synthetic differentiable artifact detectors, a hand-written gradient chain
through clean-latent estimation, and the normalized, power-scheduled
trajectory correction with an optional identity-preserving term.
"""
from .detector import ArtifactMask, DetectorSpec, binarize, combine_masks, eval_mask, mask_jacobian_action
from .diffusion_core import SigmaSchedule, clean_estimate_diffusion, euler_step_diffusion, make_sigma_schedule
from .errors import ConfigError, InputError, SingularityError, TrainingError
from .flow_core import (LatentState, TimeGrid, clean_estimate_flow, euler_step_flow, interpolate,
                        make_time_grid)
from .gradients import GradMode, artifact_loss, finite_difference_grad, grad_artifact
from .guidance import (GuidanceConfig, StepRecord, correction_window, displacement, guided_step_diffusion,
                       guided_step_flow, lambda_schedule, rec_loss, run_trajectory)
from .metrics import EvalBatch, artifact_pixel_ratio, mae_split, mean_artifact_freq
from .models import (DecoderSpec, MixtureDenoiser, MixtureSpec, MixtureVelocity, MLPVelocity, decode,
                     mixture_denoiser, mixture_velocity, train_mlp_velocity)

__version__ = "0.1.0"
