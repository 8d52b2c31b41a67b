"""Image quality metrics: PSNR, SSIM and angular error.

All metrics take ``(C, H, W)`` arrays with values in [0, 1] and return floats.
"""

from __future__ import annotations

import numpy as np
import torch

from .losses import SSIM_WINDOW, ms_ssim, ssim_terms

PSNR_CAP = 99.0
AE_EPS = 1e-8


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return pred, gt


def psnr(pred, gt) -> float:
    """PSNR in dB for peak 1.0; identical images give ``PSNR_CAP``."""
    pred, gt = _pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(pred, gt) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    pred, gt = _pair(pred, gt)
    if pred.ndim != 3:
        raise ValueError(f"expected (C, H, W) images, got shape {pred.shape}")
    if min(pred.shape[1:]) < SSIM_WINDOW:
        raise ValueError(f"image {pred.shape[1:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    s, _ = ssim_terms(torch.from_numpy(pred)[None], torch.from_numpy(gt)[None])
    return float(s.mean())


def msssim(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(ms_ssim(torch.from_numpy(pred), torch.from_numpy(gt)))


def angular_error_map(pred, gt) -> np.ndarray:
    """Per-pixel angle in degrees between RGB vectors."""
    pred, gt = _pair(pred, gt)
    if pred.ndim != 3 or pred.shape[0] != 3:
        raise ValueError(f"angular error needs 3-channel images, got shape {pred.shape}")
    dot = np.sum(pred * gt, axis=0)
    norms = np.sqrt(np.sum(pred * pred, axis=0)) * np.sqrt(np.sum(gt * gt, axis=0))
    cos = np.clip(dot / (norms + AE_EPS), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def angular_error(pred, gt) -> float:
    """Mean per-pixel angular error in degrees."""
    return float(np.mean(angular_error_map(pred, gt)))
