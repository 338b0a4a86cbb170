"""Encoding a video with the shared parameters frozen."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import Checkpoint
from .lowrank import LatentCodes, compose_modulation
from .model import forward, mse, render_frames
from .numerics import NonFiniteError
from .training import TrainConfig, VideoBatch, code_grads, sample_coords

DEFAULT_FIT_STEPS = 30
DEFAULT_FIT_LR = 3e-3


@dataclass
class FitResult:
    codes: LatentCodes
    reconstruction: np.ndarray
    losses: list[float]
    fit_steps: int


@dataclass(frozen=True)
class CompressionStats:
    original_values: int
    code_values: int

    @property
    def ratio(self) -> float:
        return self.original_values / self.code_values


def compression_stats(shape, q: int, k: int) -> CompressionStats:
    """Raw pixel count versus stored latent values (v plus one phi_t per frame).

    The backbone and basis are shared by the whole dataset and not counted.
    """
    t, h, w = shape
    if min(t, h, w, q, k) < 1:
        raise ValueError("all dimensions must be positive")
    return CompressionStats(t * h * w, q + t * k)


def train_config_of(ckpt: Checkpoint) -> TrainConfig:
    stored = dict(ckpt.meta.get("train_config", {}))
    base = TrainConfig(hidden_width=ckpt.config.hidden_width, hidden_layers=ckpt.config.hidden_layers,
                       omega0=ckpt.config.omega0, q=ckpt.config.q, k=ckpt.k)
    known = {k: v for k, v in stored.items() if hasattr(base, k)}
    return base.replace(**known)


def fit_video(ckpt: Checkpoint, video, fit_steps: int = DEFAULT_FIT_STEPS,
              fit_lr: float = DEFAULT_FIT_LR, subsample: int = 0, seed: int = 0) -> FitResult:
    """Gradient descent on (v, phi) from zero; ``subsample=0`` means full-grid gradients.

    ``losses[i]`` is the loss evaluated before step ``i``; the final entry is
    the full-grid loss of the returned codes.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 3:
        raise ValueError("video must be T x H x W")
    if video.size and (video.min() < 0 or video.max() > 1):
        raise ValueError("video intensities must lie in [0, 1]")
    cfg, params, basis = ckpt.config, ckpt.params, ckpt.basis
    tcfg = train_config_of(ckpt)
    batch = VideoBatch(video)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    codes = LatentCodes.zeros(cfg.q, ckpt.k, batch.frames)
    losses = []
    for step in range(fit_steps):
        idx = None if subsample == 0 else sample_coords(rng, batch.flat.shape[1], subsample,
                                                       batch.frames, tcfg.per_frame_coords)
        coords, target = batch.select(idx)
        loss, _, g_v, g_phi, _ = code_grads(params, cfg, codes, basis, coords, target)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite fitting loss at step {step}")
        losses.append(loss)
        codes = LatentCodes(codes.v - fit_lr * g_v, codes.phi - fit_lr * batch.frames * g_phi)
    recon = np.clip(reconstruct(ckpt, codes, video.shape[1], video.shape[2]), 0.0, 1.0)
    losses.append(mse(recon.reshape(batch.frames, -1), batch.flat))
    return FitResult(codes, recon, losses, fit_steps)


def reconstruct(ckpt: Checkpoint, codes: LatentCodes, height: int, width: int) -> np.ndarray:
    mods = compose_modulation(codes.v, ckpt.basis, codes.phi)
    return render_frames(ckpt.params, ckpt.config, mods, height, width)


def full_grid_loss(ckpt: Checkpoint, codes: LatentCodes, video) -> float:
    batch = VideoBatch(video)
    mods = compose_modulation(codes.v, ckpt.basis, codes.phi)
    return mse(forward(ckpt.params, ckpt.config, mods, batch.grid), batch.flat)
