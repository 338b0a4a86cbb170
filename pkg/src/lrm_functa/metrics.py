"""PSNR and volumetric SSIM for videos with intensities in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError

DATA_RANGE = 1.0
SSIM_WINDOW = 7
C1 = (0.01 * DATA_RANGE) ** 2
C2 = (0.03 * DATA_RANGE) ** 2


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)``; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return float("inf")
    return 10.0 * np.log10(DATA_RANGE ** 2 / err)


def _box_sum(x: np.ndarray, w: int) -> np.ndarray:
    """Sum over every fully contained w x w x w block, via a 3-D summed-volume table."""
    c = np.zeros(tuple(s + 1 for s in x.shape))
    c[1:, 1:, 1:] = x.cumsum(0).cumsum(1).cumsum(2)
    return (c[w:, w:, w:] - c[:-w, w:, w:] - c[w:, :-w, w:] - c[w:, w:, :-w]
            + c[:-w, :-w, w:] + c[:-w, w:, :-w] + c[w:, :-w, :-w] - c[:-w, :-w, :-w])


def ssim_map(a, b, window: int = SSIM_WINDOW) -> np.ndarray:
    """SSIM at every valid position of a uniform ``window``^3 box (population moments)."""
    a, b = _pair(a, b)
    if a.ndim != 3:
        raise ShapeError("SSIM3D expects T x H x W volumes")
    if min(a.shape) < window:
        raise ShapeError(f"volume {a.shape} is smaller than the {window}^3 window; "
                         f"use window <= {min(a.shape)}")
    n = float(window ** 3)
    mu_a = _box_sum(a, window) / n
    mu_b = _box_sum(b, window) / n
    var_a = _box_sum(a * a, window) / n - mu_a ** 2
    var_b = _box_sum(b * b, window) / n - mu_b ** 2
    cov = _box_sum(a * b, window) / n - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return num / den


def ssim3d(a, b, window: int = SSIM_WINDOW) -> float:
    a, b = _pair(a, b)
    if np.array_equal(a, b):
        # summed-volume rounding would otherwise leave ~1e-16 residue
        ssim_map(a, b, window)
        return 1.0
    return float(ssim_map(a, b, window).mean())


@dataclass
class QualityReport:
    psnr: list[float] = field(default_factory=list)
    ssim3d: list[float] = field(default_factory=list)

    def add(self, a, b) -> None:
        self.psnr.append(psnr(a, b))
        self.ssim3d.append(ssim3d(a, b))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim3d(self) -> float:
        return float(np.mean(self.ssim3d))
