"""Reading cardiac phase out of per-frame latent trajectories.

Pipeline: motion directions between consecutive frame codes, their first
principal axis ``p``, projection of every code onto ``p``, baseline-wander
removal, Savitzky-Golay smoothing, and prominence-thresholded extrema
(valleys are ED, peaks are ES).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks, savgol_filter

from .numerics import DegenerateInputError, as_matrix, pca_first_component

ORIENTATIONS = ("pca-sign", "intensity")


def cosine_similarity_matrix(phi) -> np.ndarray:
    phi = as_matrix(phi, "phi")
    norms = np.linalg.norm(phi, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateInputError(f"frame {int(zero[0])} has a zero-norm code")
    unit = phi / norms[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return sim


@dataclass
class MotionDirections:
    directions: np.ndarray
    kept: np.ndarray       # index t of each kept step phi_t -> phi_{t+1}
    dropped: np.ndarray


def motion_directions(phi, min_step: float = 1e-12) -> MotionDirections:
    phi = as_matrix(phi, "phi")
    if phi.shape[0] < 2:
        raise DegenerateInputError("need at least two frames")
    steps = np.diff(phi, axis=0)
    norms = np.linalg.norm(steps, axis=1)
    keep = norms >= min_step
    if not keep.any():
        raise DegenerateInputError("trajectory does not move")
    return MotionDirections(steps[keep] / norms[keep, None], np.flatnonzero(keep),
                            np.flatnonzero(~keep))


def default_detrend_window(frames: int, period: float | None = None) -> int:
    w = int(round(2 * period)) if period else frames // 2
    w = max(1, min(frames, w))
    return w if w % 2 else (w + 1 if w + 1 <= frames else w - 1)


def moving_average(x, window: int) -> np.ndarray:
    """Centred moving average; near the ends the window is cut at the boundary."""
    x = np.asarray(x, dtype=np.float64)
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, x.size)
    return (c[hi] - c[lo]) / (hi - lo)


def savgol(x, window: int = 7, order: int = 2) -> np.ndarray:
    """Savitzky-Golay smoothing with mirror padding; window forced odd and <= len(x)."""
    x = np.asarray(x, dtype=np.float64)
    window = min(window, x.size)
    if window % 2 == 0:
        window -= 1
    if window <= order:
        raise ValueError(f"window {window} too short for polynomial order {order}")
    return savgol_filter(x, window, order, mode="mirror")


@dataclass
class PhaseSignal:
    raw: np.ndarray
    detrended: np.ndarray
    filtered: np.ndarray
    direction: np.ndarray
    flipped: bool = False


@dataclass
class PhaseDetection:
    ed: list[int] = field(default_factory=list)
    es: list[int] = field(default_factory=list)
    threshold: float = 0.0


def extract_signal(phi, savgol_window: int = 7, savgol_order: int = 2,
                   detrend_window: int | None = None, period: float | None = None,
                   orient: str = "pca-sign", frame_intensity=None) -> PhaseSignal:
    """1-D phase signal of a T x k trajectory.

    ``orient="intensity"`` flips the signal, if needed, so that it falls
    when the per-frame mean intensity rises (the bright chamber is largest
    at ED, which is read out as a valley).
    """
    if orient not in ORIENTATIONS:
        raise ValueError(f"orient must be one of {ORIENTATIONS}")
    phi = as_matrix(phi, "phi")
    frames = phi.shape[0]
    if frames < min(savgol_window, 3):
        raise ValueError(f"need at least {savgol_window} frames")
    dirs = motion_directions(phi).directions
    # directions are axial (back-and-forth motion flips them), so no centring
    p = pca_first_component(np.vstack([dirs, -dirs]), center=False) if dirs.shape[0] > 1 \
        else dirs[0]
    raw = phi @ p
    flipped = False
    if orient == "intensity":
        if frame_intensity is None:
            raise ValueError("intensity orientation needs per-frame intensities")
        ref = np.asarray(frame_intensity, dtype=np.float64)
        if ref.shape != (frames,):
            raise ValueError("need one intensity per frame")
        if np.corrcoef(raw, ref)[0, 1] > 0:
            p, raw, flipped = -p, -raw, True
    window = detrend_window or default_detrend_window(frames, period)
    detrended = raw - moving_average(raw, window)
    filtered = savgol(detrended, savgol_window, savgol_order)
    return PhaseSignal(raw, detrended, filtered, p, flipped)


EDGE_MODES = ("reflect", "none")


def detect_extrema(signal, prominence_frac: float = 0.5, edges: str = "reflect") -> PhaseDetection:
    """Valleys (ED) and peaks (ES) whose topographic prominence is at least
    ``prominence_frac`` times the standard deviation of the filtered signal.

    With ``edges="reflect"`` prominence is measured on the signal mirrored
    about both end samples (the same boundary model the smoother uses), so an
    extremum two frames from the border is not penalised for the missing
    half of its contour. The end samples themselves are never reported.
    ``edges="none"`` measures prominence on the raw series.
    """
    if edges not in EDGE_MODES:
        raise ValueError(f"edges must be one of {EDGE_MODES}")
    s = signal.filtered if isinstance(signal, PhaseSignal) else np.asarray(signal, dtype=np.float64)
    if s.size < 3:
        raise ValueError("need at least three samples")
    thr = prominence_frac * float(np.std(s))
    if thr <= 0:
        return PhaseDetection([], [], thr)
    pad = s.size - 1 if edges == "reflect" else 0
    ext = np.pad(s, pad, mode="reflect") if pad else s

    def pick(x):
        idx, _ = find_peaks(x, prominence=thr)
        idx = idx - pad
        return idx[(idx >= 1) & (idx <= s.size - 2)].tolist()
    return PhaseDetection(pick(-ext), pick(ext), thr)


def frame_mae(detected, labeled, frames: int) -> float:
    """Mean over labelled frames of the distance to the closest detection.

    With no detections every label costs ``frames``.
    """
    labeled = np.asarray(list(labeled), dtype=np.float64)
    if labeled.size == 0:
        raise ValueError("no labelled frames")
    detected = np.asarray(list(detected), dtype=np.float64)
    if detected.size == 0:
        return float(frames)
    return float(np.mean(np.min(np.abs(labeled[:, None] - detected[None, :]), axis=1)))


@dataclass
class LatentWalk:
    alphas: np.ndarray
    axis: np.ndarray
    mean: np.ndarray
    phis: np.ndarray
    frames: np.ndarray


def walk_axis(phi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, first principal axis and per-frame projections of the codes themselves."""
    phi = as_matrix(phi, "phi")
    axis = pca_first_component(phi)
    mean = phi.mean(axis=0)
    return mean, axis, (phi - mean) @ axis


def latent_walk(ckpt, codes, n_samples: int = 9, alpha_range=None, overshoot: float = 1.0,
                height: int = 64, width: int = 64) -> LatentWalk:
    """Render frames at ``mean(phi) + alpha * axis`` for evenly spaced alpha.

    The default alpha range spans the observed projections, scaled by
    ``overshoot`` (> 1 exaggerates the motion).
    """
    from .fitting import reconstruct  # local: fitting imports the training stack
    from .lowrank import LatentCodes

    if n_samples < 2:
        raise ValueError("need at least two samples")
    mean, axis, proj = walk_axis(codes.phi)
    if alpha_range is None:
        alpha_range = (overshoot * proj.min(), overshoot * proj.max())
    alphas = np.linspace(alpha_range[0], alpha_range[1], n_samples)
    phis = mean + alphas[:, None] * axis
    frames = reconstruct(ckpt, LatentCodes(codes.v, phis), height, width)
    return LatentWalk(alphas, axis, mean, phis, frames)


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y)[0])
