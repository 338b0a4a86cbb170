"""Self-contained SVG plots. Each file embeds its data as a comment."""

from __future__ import annotations

import datetime as _dt
import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .formats import atomic_write

WIDTH, HEIGHT, PAD = 640, 360, 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _header(title: str, data: dict, deterministic: bool, width=WIDTH, height=HEIGHT) -> list[str]:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    if not deterministic:
        out.append(f"<!-- generated {_dt.datetime.now(_dt.timezone.utc).isoformat()} -->")
    out.append("<!-- data " + json.dumps(data, separators=(",", ":")).replace("--", "- -") + " -->")
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    return out


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Axes:
    """Linear map from data ranges into the padded plot box."""

    def __init__(self, xs, ys, width=WIDTH, height=HEIGHT, logx=False):
        self.logx = logx
        xs = np.log2(xs) if logx else np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ys = ys[np.isfinite(ys)]
        self.x0, self.x1 = float(np.min(xs)), float(np.max(xs))
        self.y0, self.y1 = (float(np.min(ys)), float(np.max(ys))) if ys.size else (0.0, 1.0)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 1, self.x1 + 1
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 1, self.y1 + 1
        self.width, self.height = width, height

    def x(self, v):
        v = np.log2(v) if self.logx else v
        return PAD + (v - self.x0) / (self.x1 - self.x0) * (self.width - 2 * PAD)

    def y(self, v):
        return self.height - PAD - (v - self.y0) / (self.y1 - self.y0) * (self.height - 2 * PAD)

    def frame(self, xlabel: str, ylabel: str, xticks=None) -> list[str]:
        w, h = self.width, self.height
        out = [f'<rect x="{PAD}" y="{PAD}" width="{w - 2 * PAD}" height="{h - 2 * PAD}" '
               'fill="none" stroke="#444"/>',
               f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle">{escape(xlabel)}</text>',
               f'<text x="14" y="{h / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {h / 2})">{escape(ylabel)}</text>',
               f'<text x="{PAD - 4}" y="{_fmt(self.y(self.y1) + 4)}" text-anchor="end">{self.y1:.3g}</text>',
               f'<text x="{PAD - 4}" y="{_fmt(self.y(self.y0) + 4)}" text-anchor="end">{self.y0:.3g}</text>']
        if xticks is None:
            xticks = [2 ** self.x0, 2 ** self.x1] if self.logx else [self.x0, self.x1]
        for t in xticks:
            out.append(f'<text x="{_fmt(self.x(t))}" y="{h - PAD + 14}" text-anchor="middle">{t:g}</text>')
        return out

    def polyline(self, xs, ys, color: str, width: float = 1.5) -> str:
        pts = " ".join(f"{_fmt(self.x(a))},{_fmt(self.y(b))}" for a, b in zip(xs, ys) if np.isfinite(b))
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'


def signal_svg(raw, filtered, ed, es, title: str = "phase signal", deterministic: bool = False) -> str:
    """Filtered trace with ED valleys and ES peaks marked; the raw trace is drawn faintly."""
    raw = np.asarray(raw, dtype=float)
    filtered = np.asarray(filtered, dtype=float)
    t = np.arange(raw.size)
    raw_c = raw - raw.mean()
    ax = _Axes(t, np.concatenate([raw_c, filtered]))
    out = _header(title, {"raw": raw.tolist(), "filtered": filtered.tolist(),
                          "ed": list(ed), "es": list(es)}, deterministic)
    out += ax.frame("frame", "signal")
    out.append(ax.polyline(t, raw_c, "#bbbbbb", 1.0))
    out.append(ax.polyline(t, filtered, PALETTE[0]))
    for idx, color, label in ((ed, PALETTE[1], "ED"), (es, PALETTE[2], "ES")):
        for i in idx:
            out.append(f'<circle cx="{_fmt(ax.x(i))}" cy="{_fmt(ax.y(filtered[i]))}" r="4" '
                       f'fill="{color}"><title>{label} {i}</title></circle>')
    out.append(f'<text x="{WIDTH - PAD}" y="{PAD - 8}" text-anchor="end">'
               f'<tspan fill="{PALETTE[1]}">ED</tspan> <tspan fill="{PALETTE[2]}">ES</tspan></text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_svg(matrix, title: str = "cosine similarity", deterministic: bool = False) -> str:
    """Square heatmap on a blue-white-red scale over [-1, 1]."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    size = 400
    cell = (size - 2 * PAD) / max(n, 1)
    out = _header(title, {"matrix": np.round(m, 6).tolist()}, deterministic, size, size)
    for i in range(n):
        for j in range(n):
            v = float(np.clip(m[i, j], -1, 1))
            if v >= 0:
                r, g, b = 255, int(255 * (1 - v)), int(255 * (1 - v))
            else:
                r, g, b = int(255 * (1 + v)), int(255 * (1 + v)), 255
            out.append(f'<rect x="{_fmt(PAD + j * cell)}" y="{_fmt(PAD + i * cell)}" '
                       f'width="{_fmt(cell)}" height="{_fmt(cell)}" fill="rgb({r},{g},{b})"/>')
    out.append(f'<text x="{size / 2}" y="{size - 14}" text-anchor="middle">frame</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def trajectory_svg(phi, ed=(), es=(), title: str = "latent trajectory", deterministic: bool = False) -> str:
    """Path of the first two coordinates of the per-frame codes."""
    phi = np.asarray(phi, dtype=float)
    xs = phi[:, 0]
    ys = phi[:, 1] if phi.shape[1] > 1 else np.zeros(len(phi))
    ax = _Axes(xs, ys)
    out = _header(title, {"phi": np.round(phi, 10).tolist()}, deterministic)
    out += ax.frame("phi[0]", "phi[1]", xticks=[ax.x0, ax.x1])
    out.append(ax.polyline(xs, ys, PALETTE[0], 1.0))
    for i, (a, b) in enumerate(zip(xs, ys)):
        color = PALETTE[1] if i in ed else PALETTE[2] if i in es else PALETTE[0]
        out.append(f'<circle cx="{_fmt(ax.x(a))}" cy="{_fmt(ax.y(b))}" r="3" fill="{color}">'
                   f"<title>frame {i}</title></circle>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def ranksweep_svg(ks, psnr, ssim, title: str = "quality against rank", deterministic: bool = False) -> str:
    """PSNR (left scale) and SSIM3D (rescaled onto the same box) against k on a log2 axis."""
    ks = np.asarray(ks, dtype=float)
    psnr = np.asarray(psnr, dtype=float)
    ssim = np.asarray(ssim, dtype=float)
    ax = _Axes(ks, psnr, logx=True)
    out = _header(title, {"k": ks.tolist(), "psnr": psnr.tolist(), "ssim3d": ssim.tolist()},
                  deterministic)
    out += ax.frame("k (log2 scale)", "PSNR [dB]", xticks=ks.tolist())
    out.append(ax.polyline(ks, psnr, PALETTE[0]))
    finite = ssim[np.isfinite(ssim)]
    if finite.size:
        lo, hi = finite.min(), finite.max()
        scaled = ax.y0 + (ssim - lo) / ((hi - lo) or 1.0) * (ax.y1 - ax.y0)
        out.append(ax.polyline(ks, scaled, PALETTE[1]))
        out.append(f'<text x="{WIDTH - PAD}" y="{PAD - 8}" text-anchor="end">'
                   f'<tspan fill="{PALETTE[0]}">PSNR</tspan> '
                   f'<tspan fill="{PALETTE[1]}">SSIM3D ({lo:.3f} to {hi:.3f})</tspan></text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, svg: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, svg.encode())
