"""Shift-modulated SIREN backbone with hand-written first and second order passes.

Every hidden layer computes ``sin(omega0 * (W h + b + shift))`` where the
per-layer shifts are slices of ``w_mod @ m`` for a modulation vector ``m``.
The output layer is affine. Several frames are evaluated at once: ``m`` has
one row per frame and the coordinates are either shared by all frames,
shape ``(N, 2)``, or given per frame, shape ``(F, N, 2)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._sincos import sincos
from .numerics import ParamStore, ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    hidden_width: int = 128
    hidden_layers: int = 4
    omega0: float = 30.0
    q: int = 256
    in_dim: int = 2
    out_dim: int = 1

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1 or self.q < 1:
            raise ValueError(f"invalid backbone sizes: {self}")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if self.in_dim != 2 or self.out_dim != 1:
            raise ValueError("the backbone maps (x, y) to a single intensity")

    def as_dict(self) -> dict:
        return asdict(self)


def backbone_shapes(cfg: BackboneConfig) -> dict[str, tuple[int, ...]]:
    h = cfg.hidden_width
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(cfg.hidden_layers):
        shapes[f"w{layer}"] = (h, cfg.in_dim if layer == 0 else h)
        shapes[f"b{layer}"] = (h,)
    shapes["w_out"] = (cfg.out_dim, h)
    shapes["b_out"] = (cfg.out_dim,)
    shapes["w_mod"] = (cfg.hidden_layers * h, cfg.q)
    return shapes


def init_backbone(params: ParamStore, cfg: BackboneConfig, rng: np.random.Generator,
                  mod_scale: float = 1.0) -> None:
    """SIREN initialisation of the backbone slices of ``params`` (in place).

    ``w_mod`` gets ``mod_scale`` times the hidden-layer range. With a zero
    latent-to-shift map neither the map nor the codes ever receive gradient,
    so ``mod_scale=0`` is only useful in tests.
    """
    h = cfg.hidden_width
    lim = np.sqrt(6.0 / h) / cfg.omega0
    for layer in range(cfg.hidden_layers):
        fan_in = cfg.in_dim if layer == 0 else h
        w_lim = 1.0 / cfg.in_dim if layer == 0 else lim
        params[f"w{layer}"] = rng.uniform(-w_lim, w_lim, size=(h, fan_in))
        params[f"b{layer}"] = rng.uniform(-1.0, 1.0, size=h) / np.sqrt(fan_in)
    params["w_out"] = rng.uniform(-lim, lim, size=(cfg.out_dim, h))
    params["b_out"] = rng.uniform(-1.0, 1.0, size=cfg.out_dim) / np.sqrt(h)
    mod_lim = mod_scale * np.sqrt(6.0 / cfg.q) / cfg.omega0
    params["w_mod"] = rng.uniform(-mod_lim, mod_lim, size=(cfg.hidden_layers * h, cfg.q))


def coord_grid(height: int, width: int) -> np.ndarray:
    """Pixel centres mapped to [-1, 1], row-major, columns are (x, y)."""
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be positive")
    xs = (2.0 * np.arange(width) + 1.0) / width - 1.0
    ys = (2.0 * np.arange(height) + 1.0) / height - 1.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _check(cfg: BackboneConfig, m: np.ndarray, coords: np.ndarray) -> np.ndarray:
    m2 = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m2.ndim != 2 or m2.shape[1] != cfg.q:
        raise ShapeError(f"modulations must have {cfg.q} columns, got shape {m2.shape}")
    if coords.shape[-1] != cfg.in_dim or coords.ndim not in (2, 3) or coords.shape[-2] == 0:
        raise ShapeError(f"bad coordinate array shape {coords.shape}")
    if coords.ndim == 3 and coords.shape[0] != m2.shape[0]:
        raise ShapeError("per-frame coordinates need one block per modulation row")
    return m2


def _shifts(params: ParamStore, cfg: BackboneConfig, m2: np.ndarray) -> np.ndarray:
    return (m2 @ params["w_mod"].T).reshape(m2.shape[0], cfg.hidden_layers, cfg.hidden_width)


def _weight_grad(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Sum over frames and points of outer(g, a); ``a`` may be shared across frames."""
    if a.ndim == 2:
        return g.sum(axis=0).T @ a
    return g.reshape(-1, g.shape[-1]).T @ a.reshape(-1, a.shape[-1])


class ForwardCache:
    __slots__ = ("m", "acts", "sins", "coss", "out")

    def __init__(self, m, acts, sins, coss, out):
        self.m, self.acts, self.sins, self.coss, self.out = m, acts, sins, coss, out


def forward(params: ParamStore, cfg: BackboneConfig, m, coords,
            keep: bool = False):
    """Predicted intensities, shape ``(F, N)``; 1-D if ``m`` is a single vector.

    With ``keep=True`` a cache for ``backward``/``hvp`` is returned as well.
    """
    coords = np.asarray(coords, dtype=np.float64)
    single = np.ndim(m) == 1
    m2 = _check(cfg, m, coords)
    shifts = _shifts(params, cfg, m2)
    a = coords
    acts, sins, coss = [], [], []
    for layer in range(cfg.hidden_layers):
        z = a @ params[f"w{layer}"].T + params[f"b{layer}"] + shifts[:, layer, None, :]
        acts.append(a)
        a, c = sincos(z, cfg.omega0, keep)
        sins.append(a)
        if keep:
            coss.append(c)
    out = a @ params["w_out"][0] + params["b_out"][0]
    if keep:
        return out, ForwardCache(m2, acts + [a], sins, coss, out)
    return out[0] if single else out


def backward(params: ParamStore, cfg: BackboneConfig, cache: ForwardCache,
             dout: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backpropagate ``dout = dLoss/dOut`` (shape ``(F, N)``).

    Returns parameter gradients by slice name and the gradient w.r.t. each
    modulation row, shape ``(F, q)``.
    """
    dout = np.asarray(dout, dtype=np.float64)
    if dout.shape != cache.out.shape:
        raise ShapeError(f"output gradient shape {dout.shape} != output shape {cache.out.shape}")
    w_out = params["w_out"][0]
    top = cache.acts[-1]
    grads: dict[str, np.ndarray] = {
        "w_out": (dout.reshape(-1) @ top.reshape(-1, top.shape[-1]))[None, :],
        "b_out": np.array([dout.sum()]),
    }
    g_shift = np.empty((dout.shape[0], cfg.hidden_layers, cfg.hidden_width))
    ga = dout[..., None] * w_out
    for layer in reversed(range(cfg.hidden_layers)):
        gz = ga * cache.coss[layer]
        gz *= cfg.omega0
        grads[f"w{layer}"] = _weight_grad(gz, cache.acts[layer])
        grads[f"b{layer}"] = gz.sum(axis=(0, 1))
        g_shift[:, layer] = gz.sum(axis=1)
        if layer:
            ga = gz @ params[f"w{layer}"]
    g_shift = g_shift.reshape(dout.shape[0], -1)
    grads["w_mod"] = g_shift.T @ cache.m
    return grads, g_shift @ params["w_mod"]


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def mse_grads(params: ParamStore, cfg: BackboneConfig, m, coords, target):
    """Loss ``mean((out - target)^2)`` over all frames and points, and its gradients."""
    out, cache = forward(params, cfg, m, coords, keep=True)
    target = np.broadcast_to(target, out.shape)
    resid = out - target
    grads, g_m = backward(params, cfg, cache, 2.0 * resid / resid.size)
    return float(np.mean(resid ** 2)), grads, g_m


def mse_hvp(params: ParamStore, cfg: BackboneConfig, m, coords, target, dm):
    """Hessian-vector product of the MSE loss along a modulation direction.

    Returns ``(grads, g_m, r_grads, r_g_m)``: the ordinary gradients plus their
    directional derivatives when ``m`` moves along ``dm`` (R-operator applied
    to the forward and backward passes).
    """
    out, cache = forward(params, cfg, m, coords, keep=True)
    m2 = cache.m
    dm2 = np.atleast_2d(np.asarray(dm, dtype=np.float64))
    if dm2.shape != m2.shape:
        raise ShapeError("direction must match the modulation shape")
    target = np.broadcast_to(target, out.shape)
    w = cfg.omega0
    r_shift = _shifts(params, cfg, dm2)
    r_acts = [None]
    r_zs = []
    ra = None
    for layer in range(cfg.hidden_layers):
        rz = r_shift[:, layer, None, :]
        if ra is not None:
            rz = ra @ params[f"w{layer}"].T + rz
        else:
            rz = np.broadcast_to(rz, cache.sins[layer].shape)
        r_zs.append(rz)
        ra = w * cache.coss[layer] * rz
        r_acts.append(ra)

    n = out.size
    w_out = params["w_out"][0]
    top, r_top = cache.acts[-1], r_acts[-1]
    dout = 2.0 * (out - target) / n
    r_dout = 2.0 * (r_top @ w_out) / n
    flat = lambda x: x.reshape(-1, x.shape[-1])
    grads = {"w_out": (dout.reshape(-1) @ flat(top))[None, :], "b_out": np.array([dout.sum()])}
    r_grads = {
        "w_out": (r_dout.reshape(-1) @ flat(top) + dout.reshape(-1) @ flat(r_top))[None, :],
        "b_out": np.array([r_dout.sum()]),
    }
    f = out.shape[0]
    g_shift = np.empty((f, cfg.hidden_layers, cfg.hidden_width))
    r_g_shift = np.empty_like(g_shift)
    ga = dout[..., None] * w_out
    r_ga = r_dout[..., None] * w_out
    for layer in reversed(range(cfg.hidden_layers)):
        c, s = cache.coss[layer], cache.sins[layer]
        gz = w * ga * c
        r_gz = w * r_ga * c - (w * w) * ga * s * r_zs[layer]
        a = cache.acts[layer]
        grads[f"w{layer}"] = _weight_grad(gz, a)
        r_w = _weight_grad(r_gz, a)
        if r_acts[layer] is not None:
            r_w = r_w + _weight_grad(gz, r_acts[layer])
        r_grads[f"w{layer}"] = r_w
        grads[f"b{layer}"] = gz.sum(axis=(0, 1))
        r_grads[f"b{layer}"] = r_gz.sum(axis=(0, 1))
        g_shift[:, layer] = gz.sum(axis=1)
        r_g_shift[:, layer] = r_gz.sum(axis=1)
        if layer:
            ga = gz @ params[f"w{layer}"]
            r_ga = r_gz @ params[f"w{layer}"]
    g_shift = g_shift.reshape(f, -1)
    r_g_shift = r_g_shift.reshape(f, -1)
    w_mod = params["w_mod"]
    grads["w_mod"] = g_shift.T @ m2
    r_grads["w_mod"] = r_g_shift.T @ m2 + g_shift.T @ dm2
    return grads, g_shift @ w_mod, r_grads, r_g_shift @ w_mod


def render_frame(params: ParamStore, cfg: BackboneConfig, m, height: int, width: int) -> np.ndarray:
    """Unclamped ``height x width`` frame for one modulation vector."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 1:
        raise ShapeError("render_frame takes a single modulation vector")
    return forward(params, cfg, m, coord_grid(height, width)).reshape(height, width)


def render_frames(params: ParamStore, cfg: BackboneConfig, mods, height: int, width: int,
                  chunk: int = 8) -> np.ndarray:
    """Render one frame per modulation row, a few frames at a time to bound memory."""
    mods = np.atleast_2d(np.asarray(mods, dtype=np.float64))
    grid = coord_grid(height, width)
    out = np.empty((mods.shape[0], height * width))
    for start in range(0, mods.shape[0], chunk):
        out[start:start + chunk] = forward(params, cfg, mods[start:start + chunk], grid)
    return out.reshape(-1, height, width)
