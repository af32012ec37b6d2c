"""Denoising diffusion with a selective state-space (SSM-CNN hybrid) UNet denoiser."""

from .ssm import (ContinuousSsmParams, DiscreteSsmParams, S6Weights, discretize,
                  identity_s6_weights, s6_forward, selective_scan, ssm_conv_apply,
                  ssm_kernel)
from .cross_scan import (Permutation, ScanBundle, csm_forward, regenerate_permutation,
                         scan_expand, scan_merge)
from .network import ModelConfig, UNet, sinusoidal_time_embedding
from .diffusion import (NoiseSchedule, SamplerConfig, ddim_step, loss_simple,
                        make_schedule, p_sample_step, q_sample, sample)
from .data import DatasetHandle, augment, batch_iter, load_dataset, synth_toy_dataset
from .evaluation import (FeatureStats, evaluate_fid, frechet_distance, gaussian_stats,
                         pixel_embedder)
from .training import RunConfig, Trainer, run_training
from .estimator import DiffusionImageGenerator

__all__ = [
    "ContinuousSsmParams", "DiscreteSsmParams", "S6Weights", "discretize",
    "identity_s6_weights", "s6_forward", "selective_scan", "ssm_conv_apply",
    "ssm_kernel", "Permutation", "ScanBundle", "csm_forward",
    "regenerate_permutation", "scan_expand", "scan_merge", "ModelConfig", "UNet",
    "sinusoidal_time_embedding", "NoiseSchedule", "SamplerConfig", "ddim_step",
    "loss_simple", "make_schedule", "p_sample_step", "q_sample", "sample",
    "DatasetHandle", "augment", "batch_iter", "load_dataset", "synth_toy_dataset",
    "FeatureStats", "evaluate_fid", "frechet_distance", "gaussian_stats",
    "pixel_embedder", "RunConfig", "Trainer", "run_training",
    "DiffusionImageGenerator",
]

__version__ = "0.1.0"
