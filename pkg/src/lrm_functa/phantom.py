"""Synthetic beating-disk videos with analytic end-diastole/end-systole labels.

A bright soft-edged disk pulses as ``r(t) = r0 + A sin(2 pi t / P + phase)``
while its centre drifts slowly. Maximal radius is labelled ED, minimal ES.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .formats import read_video, write_video  # noqa: F401  (re-exported)
from .numerics import make_rng

EDGE_RAMP = 1.5


@dataclass(frozen=True)
class PhantomConfig:
    T: int = 32
    H: int = 64
    W: int = 64
    period: float = 16.0
    base_radius: float = 0.25   # fraction of min(H, W)
    amplitude: float = 0.08     # fraction of min(H, W)
    phase: float = 0.0
    drift: float = 0.0          # pixels per frame
    drift_angle: float = 0.0
    noise: float = 0.05
    foreground: float = 0.9
    background: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if min(self.T, self.H, self.W) < 1:
            raise ValueError("T, H, W must be positive")
        if not self.period > 2:
            raise ValueError("period must exceed 2 frames")
        if not 0 <= self.amplitude < self.base_radius:
            raise ValueError("need 0 <= amplitude < base_radius")
        if self.base_radius + self.amplitude >= 0.5:
            raise ValueError("disk must fit inside the frame: base_radius + amplitude < 0.5")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not 0 <= self.background <= self.foreground <= 1:
            raise ValueError("need 0 <= background <= foreground <= 1")


def radius_px(cfg: PhantomConfig, t) -> np.ndarray:
    scale = min(cfg.H, cfg.W)
    t = np.asarray(t, dtype=np.float64)
    return scale * (cfg.base_radius + cfg.amplitude * np.sin(2 * np.pi * t / cfg.period + cfg.phase))


def centre_px(cfg: PhantomConfig, t) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=np.float64) - (cfg.T - 1) / 2.0
    return (cfg.W / 2.0 + cfg.drift * t * np.cos(cfg.drift_angle),
            cfg.H / 2.0 + cfg.drift * t * np.sin(cfg.drift_angle))


def disk_fill(cfg: PhantomConfig, t: int) -> np.ndarray:
    """Noise-free disk coverage in [0, 1] for frame ``t`` (linear edge ramp)."""
    cx, cy = centre_px(cfg, t)
    ys = np.arange(cfg.H) + 0.5
    xs = np.arange(cfg.W) + 0.5
    dist = np.hypot(xs[None, :] - cx, ys[:, None] - cy)
    return np.clip((radius_px(cfg, t) - dist) / EDGE_RAMP + 0.5, 0.0, 1.0)


def phase_labels(cfg: PhantomConfig) -> tuple[list[int], list[int]]:
    """Frames nearest to each radius maximum (ED) and minimum (ES).

    Only extrema that are visible as interior local extrema of the sampled
    sequence count, i.e. exact times in [0.5, T - 1.5]. A static disk has none.
    """
    if cfg.amplitude == 0:
        return [], []

    def times(target: float) -> list[int]:
        first = (target - cfg.phase) * cfg.period / (2 * np.pi)
        first -= np.floor(first / cfg.period) * cfg.period
        out = []
        t = first
        while t <= cfg.T - 1.5:
            if t >= 0.5:
                out.append(int(np.floor(t + 0.5)))
            t += cfg.period
        return out

    return times(np.pi / 2), times(3 * np.pi / 2)


def generate_phantom(cfg: PhantomConfig):
    """Return ``(video, ed_frames, es_frames)`` for one phantom."""
    cfg.validate()
    rng = make_rng(cfg.seed)
    video = np.empty((cfg.T, cfg.H, cfg.W))
    for t in range(cfg.T):
        video[t] = cfg.background + (cfg.foreground - cfg.background) * disk_fill(cfg, t)
    if cfg.noise > 0:
        video *= 1.0 + cfg.noise * rng.uniform(-1.0, 1.0, size=video.shape)
    np.clip(video, 0.0, 1.0, out=video)
    ed, es = phase_labels(cfg)
    return video, ed, es


@dataclass(frozen=True)
class SuiteSpec:
    count: int = 16
    T: int = 32
    H: int = 64
    W: int = 64
    period_range: tuple[float, float] = (10.0, 20.0)
    radius_range: tuple[float, float] = (0.2, 0.3)
    amplitude_range: tuple[float, float] = (0.06, 0.1)
    drift_range: tuple[float, float] = (0.0, 0.1)
    noise: float = 0.05
    seed: int = 0


def phantom_suite(suite: SuiteSpec) -> list[PhantomConfig]:
    """Randomised phantom configs, deterministic in ``suite.seed``."""
    rng = make_rng(suite.seed)
    out = []
    for i in range(suite.count):
        out.append(PhantomConfig(
            T=suite.T, H=suite.H, W=suite.W,
            period=float(rng.uniform(*suite.period_range)),
            base_radius=float(rng.uniform(*suite.radius_range)),
            amplitude=float(rng.uniform(*suite.amplitude_range)),
            phase=float(rng.uniform(0.0, 2 * np.pi)),
            drift=float(rng.uniform(*suite.drift_range)),
            drift_angle=float(rng.uniform(0.0, 2 * np.pi)),
            noise=suite.noise,
            seed=int(rng.integers(0, 2**31 - 1)),
        ))
    return out


def config_dict(cfg: PhantomConfig) -> dict:
    return asdict(cfg)


def noiseless(cfg: PhantomConfig) -> PhantomConfig:
    return replace(cfg, noise=0.0)


def estimate_radius(frame, threshold: float | None = None) -> float:
    """Disk radius in pixels from the bright area, ``sqrt(area / pi)``.

    Pixels above ``threshold`` count as disk; the default threshold is the
    midpoint between the darkest and brightest pixel.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError("frame must be 2-D")
    if threshold is None:
        threshold = 0.5 * (frame.min() + frame.max())
    return float(np.sqrt(np.count_nonzero(frame > threshold) / np.pi))
