"""Synthesis of realistically degraded RAW images and RAW-domain evaluation."""

__version__ = "0.1.0"

from .degrade import (
    DegradationConfig,
    DegradationRecord,
    degrade,
    degrade_batch,
    degrade_level1,
    degrade_level2,
    exposure_scale,
    replay,
    requantize,
    stable_mix,
)
from .kernels import Kernel, KernelPool, convolve, disk_kernel, gaussian_kernel, load_psf, motion_kernel, sample_kernels
from .metrics import MetricReport, evaluate_pairs, psnr, ssim
from .noise import NoiseProfile, ProfileRegistry, add_shot_read_noise, estimate_profile, sample_profile
from .raw_core import MosaicImage, RawImage, clip01, demosaic_bilinear, normalize, pack_rggb, unpack_rggb

__all__ = [
    "add_shot_read_noise",
    "clip01",
    "convolve",
    "DegradationConfig",
    "DegradationRecord",
    "degrade",
    "degrade_batch",
    "degrade_level1",
    "degrade_level2",
    "demosaic_bilinear",
    "disk_kernel",
    "estimate_profile",
    "evaluate_pairs",
    "exposure_scale",
    "gaussian_kernel",
    "Kernel",
    "KernelPool",
    "load_psf",
    "MetricReport",
    "MosaicImage",
    "motion_kernel",
    "NoiseProfile",
    "normalize",
    "pack_rggb",
    "ProfileRegistry",
    "psnr",
    "RawImage",
    "replay",
    "requantize",
    "sample_kernels",
    "sample_profile",
    "ssim",
    "stable_mix",
    "unpack_rggb",
]
