"""Meta-learning of the shared backbone and subspace.

Inner loop: per video, codes (v, phi) start at zero and take a few plain
gradient steps on the reconstruction loss. Outer loop: the loss at the
adapted codes, plus ``lambda_ortho`` times the subspace orthogonality
penalty, drives one Adam step on the backbone and the basis ``beta``.

The inner loss is the mean over frames of the per-frame pixel MSE. ``v``
descends that mean; each ``phi_t`` descends its own frame's MSE, which is
the same gradient scaled by the frame count.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .formats import Checkpoint, write_checkpoint
from .lowrank import INIT_MODES, LatentCodes, compose_modulation, init_subspace, ortho_penalty
from .model import BackboneConfig, backbone_shapes, init_backbone, mse, mse_grads, mse_hvp, forward, coord_grid
from .numerics import AdamState, NonFiniteError, ParamStore, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    # backbone and subspace
    hidden_width: int = 64
    hidden_layers: int = 3
    omega0: float = 30.0
    q: int = 256
    k: int = 2
    init_mode: str = "ortho"
    mod_scale: float = 1.0
    # meta-learning schedule
    inner_steps: int = 3
    inner_lr: float = 1e-2
    outer_lr: float = 1e-4
    outer_iters: int = 1000
    batch_videos: int = 2
    coord_subsample: int = 256
    per_frame_coords: bool = False
    lambda_ortho: float = 1.0
    meta_order: str = "first"
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if not (self.inner_lr > 0 and self.outer_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.coord_subsample < 1 or self.batch_videos < 1 or self.outer_iters < 0:
            raise ValueError("coord_subsample, batch_videos must be >= 1 and outer_iters >= 0")
        if self.lambda_ortho < 0:
            raise ValueError("lambda_ortho must be >= 0")
        if self.meta_order not in ("first", "second"):
            raise ValueError("meta_order must be 'first' or 'second'")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if not 1 <= self.k <= self.q:
            raise ValueError("need 1 <= k <= q")

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(hidden_width=self.hidden_width, hidden_layers=self.hidden_layers,
                              omega0=self.omega0, q=self.q)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, key)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())


def _coerce(kind, value: str, key: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ValueError(f"bad value {value!r} for {key} ({kind})") from None
    return value


@dataclass(frozen=True)
class LossReport:
    iteration: int
    recon: float
    ortho: float
    total: float


def init_params(cfg: TrainConfig) -> ParamStore:
    """Backbone slices plus the k x q basis ``beta`` in one store."""
    bcfg = cfg.backbone
    shapes = backbone_shapes(bcfg)
    shapes["beta"] = (cfg.k, cfg.q)
    store = ParamStore(shapes)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0])))
    init_backbone(store, bcfg, rng, mod_scale=cfg.mod_scale)
    store["beta"] = init_subspace(cfg.k, cfg.q, cfg.init_mode, rng=rng).basis
    return store


def sample_coords(rng: np.random.Generator, n_pixels: int, n: int, frames: int,
                  per_frame: bool) -> np.ndarray:
    """Pixel indices, shape ``(n,)`` shared by all frames or ``(frames, n)``."""
    n = min(n, n_pixels)
    if per_frame:
        return np.stack([rng.choice(n_pixels, n, replace=False) for _ in range(frames)])
    return rng.choice(n_pixels, n, replace=False)


class VideoBatch:
    """Video flattened to ``(T, H*W)`` plus its coordinate grid."""

    def __init__(self, video: np.ndarray):
        video = np.asarray(video, dtype=np.float64)
        self.shape = video.shape
        self.flat = video.reshape(video.shape[0], -1)
        self.grid = coord_grid(video.shape[1], video.shape[2])

    @property
    def frames(self) -> int:
        return self.shape[0]

    def select(self, idx: np.ndarray | None):
        if idx is None:
            return self.grid, self.flat
        if idx.ndim == 1:
            return self.grid[idx], self.flat[:, idx]
        return self.grid[idx], np.take_along_axis(self.flat, idx, axis=1)


def code_grads(params: ParamStore, cfg: BackboneConfig, codes: LatentCodes, basis: np.ndarray,
               coords: np.ndarray, target: np.ndarray):
    """Loss and gradients w.r.t. backbone, v, phi and basis for one video."""
    mods = compose_modulation(codes.v, basis, codes.phi)
    loss, grads, g_m = mse_grads(params, cfg, mods, coords, target)
    return loss, grads, g_m.sum(axis=0), g_m @ basis.T, codes.phi.T @ g_m


def _inner_update(codes: LatentCodes, g_v, g_phi, lr: float) -> LatentCodes:
    return LatentCodes(codes.v - lr * g_v, codes.phi - (lr * codes.frames) * g_phi)


def inner_adapt(params: ParamStore, cfg: BackboneConfig, basis: np.ndarray, video,
                tcfg: TrainConfig, rng: np.random.Generator, history: list | None = None,
                steps: int | None = None, lr: float | None = None,
                subsample: int | None = None) -> LatentCodes:
    """Fit (v, phi) from zero by plain gradient descent with the backbone fixed.

    When ``history`` is a list, ``(codes, pixel_indices)`` before every step is
    appended to it (needed for second-order meta-gradients).
    ``subsample=0`` uses the full pixel grid.
    """
    batch = video if isinstance(video, VideoBatch) else VideoBatch(video)
    steps = tcfg.inner_steps if steps is None else steps
    lr = tcfg.inner_lr if lr is None else lr
    n = tcfg.coord_subsample if subsample is None else subsample
    codes = LatentCodes.zeros(cfg.q, basis.shape[0], batch.frames)
    for step in range(steps):
        idx = None if n == 0 else sample_coords(rng, batch.flat.shape[1], n, batch.frames,
                                               tcfg.per_frame_coords)
        coords, target = batch.select(idx)
        loss, _, g_v, g_phi, _ = code_grads(params, cfg, codes, basis, coords, target)
        if not np.isfinite(loss) or not (np.all(np.isfinite(g_v)) and np.all(np.isfinite(g_phi))):
            raise NonFiniteError(f"non-finite inner loss at step {step}")
        if history is not None:
            history.append((codes, idx))
        codes = _inner_update(codes, g_v, g_phi, lr)
    return codes


def _second_order_grads(params, cfg, basis, batch, tcfg, history, codes, out_grads, g_v, g_phi, g_basis):
    """Reverse pass through the unrolled inner loop.

    ``out_grads`` (backbone) and ``g_basis`` are updated in place; the
    adjoint of the codes starts at the outer-loss gradient (g_v, g_phi).
    """
    adj_v, adj_phi = g_v, g_phi
    frames = batch.frames
    for prev, idx in reversed(history):
        w_v = tcfg.inner_lr * adj_v
        w_phi = (tcfg.inner_lr * frames) * adj_phi
        coords, target = batch.select(idx)
        mods = compose_modulation(prev.v, basis, prev.phi)
        dm = w_v + w_phi @ basis
        _, g_m, r_grads, r_g_m = mse_hvp(params, cfg, mods, coords, target, dm)[0:4]
        for name, g in r_grads.items():
            out_grads[name] -= g
        g_basis -= w_phi.T @ g_m + prev.phi.T @ r_g_m
        adj_v = adj_v - r_g_m.sum(axis=0)
        adj_phi = adj_phi - r_g_m @ basis.T
    return out_grads, g_basis


def video_meta_grads(params: ParamStore, cfg: BackboneConfig, video, tcfg: TrainConfig,
                     rng: np.random.Generator):
    """Outer reconstruction loss of one video and its gradients (backbone dict, basis)."""
    batch = video if isinstance(video, VideoBatch) else VideoBatch(video)
    basis = params["beta"]
    history: list | None = [] if tcfg.meta_order == "second" else None
    codes = inner_adapt(params, cfg, basis, batch, tcfg, rng, history=history)
    idx = sample_coords(rng, batch.flat.shape[1], tcfg.coord_subsample, batch.frames,
                        tcfg.per_frame_coords)
    coords, target = batch.select(idx)
    loss, grads, g_v, g_phi, g_basis = code_grads(params, cfg, codes, basis, coords, target)
    if history:
        grads, g_basis = _second_order_grads(params, cfg, basis, batch, tcfg, history, codes,
                                             grads, g_v, g_phi, g_basis)
    return loss, grads, g_basis


def outer_step(params: ParamStore, cfg: BackboneConfig, videos: Sequence, tcfg: TrainConfig,
               adam: AdamState, rng: np.random.Generator, iteration: int = 0) -> LossReport:
    """One meta-update over a batch of videos; returns the pre-update losses."""
    if not len(videos):
        raise ValueError("empty batch")
    params.zero_grad()
    recon = 0.0
    scale = 1.0 / len(videos)
    for video in videos:
        loss, grads, g_basis = video_meta_grads(params, cfg, video, tcfg, rng)
        recon += scale * loss
        params.add_grads(grads, scale)
        params.grad("beta")[...] += scale * g_basis
    ortho, g_ortho = ortho_penalty(params["beta"])
    if tcfg.lambda_ortho:
        params.grad("beta")[...] += tcfg.lambda_ortho * g_ortho
    if not np.isfinite(recon):
        raise NonFiniteError(f"non-finite outer loss at iteration {iteration}")
    adam_step(params, adam)
    return LossReport(iteration, recon, ortho, recon + tcfg.lambda_ortho * ortho)


def meta_objective(params: ParamStore, cfg: BackboneConfig, video, tcfg: TrainConfig, seed: int) -> float:
    """Outer objective of one video as a plain function of the parameters.

    Replays the same pixel samples for a given ``seed``; used as the
    finite-difference reference for meta-gradients.
    """
    batch = VideoBatch(video)
    rng = np.random.Generator(np.random.PCG64(seed))
    codes = inner_adapt(params, cfg, params["beta"], batch, tcfg, rng)
    idx = sample_coords(rng, batch.flat.shape[1], tcfg.coord_subsample, batch.frames,
                        tcfg.per_frame_coords)
    coords, target = batch.select(idx)
    mods = compose_modulation(codes.v, params["beta"], codes.phi)
    recon = mse(forward(params, cfg, mods, coords), target)
    return recon + tcfg.lambda_ortho * ortho_penalty(params["beta"])[0]


def make_checkpoint(params: ParamStore, tcfg: TrainConfig, curve: list[LossReport]) -> Checkpoint:
    meta = {
        "train_config": tcfg.as_dict(),
        "loss_curve": [[r.iteration, r.recon, r.ortho, r.total] for r in curve],
    }
    return Checkpoint(tcfg.backbone, tcfg.k, params.copy(), meta)


def train(videos: Sequence[np.ndarray], tcfg: TrainConfig, checkpoint_path=None, curve_csv=None,
          callback: Callable[[LossReport], None] | None = None) -> Checkpoint:
    """Run ``outer_iters`` meta-updates over shuffled batches of ``videos``."""
    if not len(videos):
        raise ValueError("training set is empty")
    cfg = tcfg.backbone
    params = init_params(tcfg)
    adam = AdamState(lr=tcfg.outer_lr)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([tcfg.seed, 1])))
    batches = [VideoBatch(v) for v in videos]
    curve: list[LossReport] = []
    csv_file = None
    if curve_csv is not None:
        Path(curve_csv).parent.mkdir(parents=True, exist_ok=True)
        csv_file = open(curve_csv, "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(["iteration", "recon", "ortho", "total"])
    try:
        order: list[int] = []
        for it in range(tcfg.outer_iters):
            if len(order) < tcfg.batch_videos:
                order.extend(rng.permutation(len(batches)).tolist())
            chosen = [batches[i] for i in order[:tcfg.batch_videos]]
            del order[:tcfg.batch_videos]
            report = outer_step(params, cfg, chosen, tcfg, adam, rng, iteration=it)
            curve.append(report)
            if csv_file is not None:
                writer.writerow([report.iteration, repr(report.recon), repr(report.ortho),
                                 repr(report.total)])
            if callback is not None:
                callback(report)
            if it % 50 == 0:
                log.info("iter %d recon %.5f ortho %.4f", it, report.recon, report.ortho)
            if (checkpoint_path is not None and tcfg.checkpoint_every
                    and (it + 1) % tcfg.checkpoint_every == 0):
                write_checkpoint(checkpoint_path, make_checkpoint(params, tcfg, curve))
    finally:
        if csv_file is not None:
            csv_file.close()
    ckpt = make_checkpoint(params, tcfg, curve)
    if checkpoint_path is not None:
        write_checkpoint(checkpoint_path, ckpt)
    return ckpt
