"""Command line front end: ``lrm-functa <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. ``LRM_THREADS``
caps the BLAS/OpenMP thread pools; heavy modules are imported only after
it has been applied.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")
MANIFEST = "manifest.csv"


class UsageError(Exception):
    pass


def _apply_thread_cap() -> None:
    raw = os.environ.get("LRM_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LRM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"LRM_THREADS must be a positive integer, got {raw!r}")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


# ---------------------------------------------------------------- helpers

def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _existing_file(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _existing_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} not found: {path}")
    return p


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode()


def _write_csv(path: Path, header, rows) -> None:
    from .formats import atomic_write

    atomic_write(path, _csv_bytes(header, rows))


def _num(x: float) -> str:
    # shortest round-trip repr; inf/nan spelled out
    return repr(float(x)) if x == x and abs(x) != float("inf") else str(float(x))


def _join(idx) -> str:
    return " ".join(str(int(i)) for i in idx)


def _dataset(path: Path) -> list[dict]:
    """Videos of a directory, in manifest order when a manifest is present."""
    manifest = path / MANIFEST
    if manifest.is_file():
        with open(manifest, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            row["file"] = path / row["path"]
            row["ed"] = _int_list(row.get("ed", ""))
            row["es"] = _int_list(row.get("es", ""))
        return rows
    files = sorted(path.glob("*.lrmv"))
    return [{"path": f.name, "file": f, "ed": [], "es": []} for f in files]


def _labels_for(video_path: Path, manifest: Path | None):
    if manifest is None:
        return None
    for row in _dataset(manifest.parent):
        if Path(row["file"]).resolve() == video_path.resolve():
            return row["ed"], row["es"]
    return None


def _train_config(args, overrides=("k", "outer_iters", "seed")):
    from .training import TrainConfig, _coerce
    from dataclasses import fields

    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    changes = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in types:
            raise UsageError(f"unknown config key {key!r}")
        try:
            changes[key] = _coerce(types[key], value, key)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    for key in overrides:
        if getattr(args, key, None) is not None:
            changes[key] = getattr(args, key)
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_videos(rows):
    from .formats import read_video

    return [read_video(r["file"]) for r in rows]


# ---------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    from .phantom import SuiteSpec, generate_phantom, phantom_suite, write_video

    suite_spec = SuiteSpec(count=args.count, T=args.frames, H=args.size, W=args.size,
                           period_range=(args.period_min, args.period_max), noise=args.noise,
                           seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, cfg in enumerate(phantom_suite(suite_spec)):
        video, ed, es = generate_phantom(cfg)
        name = f"phantom_{i:03d}.lrmv"
        write_video(out / name, video)
        rows.append([name, _num(cfg.period), _num(cfg.phase), _join(ed), _join(es)])
    _write_csv(out / MANIFEST, ["path", "period", "phase", "ed", "es"], rows)
    print(f"wrote {len(rows)} videos to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .formats import atomic_write
    from .training import train

    data = _existing_dir(args.data, "data directory")
    tcfg = _train_config(args)
    rows = _dataset(data)
    if not rows:
        raise UsageError(f"no .lrmv videos in {data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.txt", tcfg.to_text().encode())
    ckpt = train(_load_videos(rows), tcfg, checkpoint_path=out / "checkpoint.lrmc",
                 curve_csv=out / "loss_curve.csv")
    final = ckpt.meta["loss_curve"][-1] if ckpt.meta["loss_curve"] else None
    if final is not None:
        print(f"iteration {final[0]}: recon {final[1]:.6f} ortho {final[2]:.6f}")
    print(f"checkpoint written to {out / 'checkpoint.lrmc'}")
    return EXIT_OK


def _fit_rows(ckpt, rows, args, out: Path | None):
    """Fit every video; returns per-video (name, video, FitResult)."""
    from .fitting import fit_video
    from .formats import write_latents, write_video

    results = []
    for row in rows:
        from .formats import read_video

        video = read_video(row["file"])
        res = fit_video(ckpt, video, args.fit_steps, args.fit_lr, args.subsample, args.seed)
        stem = Path(row["path"]).stem
        if out is not None:
            write_latents(out / f"{stem}.lrml", res.codes)
            write_video(out / f"{stem}_recon.lrmv", res.reconstruction)
        results.append((stem, video, res))
    return results


def _video_rows(args):
    if args.data:
        rows = _dataset(_existing_dir(args.data, "data directory"))
    else:
        rows = [{"path": Path(v).name, "file": _existing_file(v, "video")} for v in args.video]
    if not rows:
        raise UsageError("no input videos")
    return rows


def cmd_fit(args) -> int:
    from .fitting import compression_stats
    from .formats import read_checkpoint
    from .metrics import psnr

    ckpt_path = _existing_file(args.checkpoint, "checkpoint")
    rows = _video_rows(args)
    ckpt = read_checkpoint(ckpt_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for stem, video, res in _fit_rows(ckpt, rows, args, out):
        stats = compression_stats(video.shape, ckpt.config.q, ckpt.k)
        table.append([stem, res.fit_steps, _num(res.losses[-1]), _num(psnr(video, res.reconstruction)),
                      stats.original_values, stats.code_values, _num(stats.ratio)])
        print(f"{stem}: psnr {float(table[-1][3]):.2f} dB, ratio {stats.ratio:.1f}")
    _write_csv(out / "fit.csv", ["video", "fit_steps", "final_mse", "psnr", "original_values",
                                 "code_values", "ratio"], table)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .fitting import fit_video, reconstruct
    from .formats import read_checkpoint, read_latents, read_video
    from .numerics import DegenerateInputError
    from .plots import heatmap_svg, signal_svg, trajectory_svg, write_svg
    from .trajectory import cosine_similarity_matrix, detect_extrema, extract_signal, frame_mae

    ckpt_path = _existing_file(args.checkpoint, "checkpoint")
    video_path = _existing_file(args.video, "video")
    latents_path = _existing_file(args.latents, "latents")
    manifest = _existing_file(args.manifest, "manifest")
    if (video_path is None) == (latents_path is None):
        raise UsageError("give exactly one of --video or --latents")
    ckpt = read_checkpoint(ckpt_path)
    video = None
    if video_path is not None:
        video = read_video(video_path)
        codes = fit_video(ckpt, video, args.fit_steps, args.fit_lr, args.subsample, args.seed).codes
    else:
        codes = read_latents(latents_path)
    intensity = None
    if args.orient == "intensity":
        frames = video if video is not None else reconstruct(ckpt, codes, args.height, args.width)
        intensity = frames.reshape(frames.shape[0], -1).mean(axis=1)
    try:
        sig = extract_signal(codes.phi, args.savgol_window, args.savgol_order, args.detrend_window,
                             args.period, orient=args.orient, frame_intensity=intensity)
    except DegenerateInputError as exc:
        print(f"error: degenerate latent trajectory: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    det = detect_extrema(sig, args.prominence)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames_n = codes.frames
    ed_set, es_set = set(det.ed), set(det.es)
    _write_csv(out / "signals.csv",
               ["frame_index", "s_raw", "s_detrended", "s_filt", "is_ed", "is_es"],
               [[t, _num(sig.raw[t]), _num(sig.detrended[t]), _num(sig.filtered[t]),
                 int(t in ed_set), int(t in es_set)] for t in range(frames_n)])
    cos = cosine_similarity_matrix(codes.phi)
    _write_csv(out / "cosine.csv", [f"f{j}" for j in range(frames_n)],
               [[_num(x) for x in row] for row in cos])
    summary = [["ed", _join(det.ed)], ["es", _join(det.es)], ["threshold", _num(det.threshold)],
               ["direction", " ".join(_num(x) for x in sig.direction)], ["flipped", int(sig.flipped)]]
    ed_es = (args.ed, args.es) if args.ed is not None or args.es is not None else None
    if ed_es is None and video_path is not None:
        ed_es = _labels_for(video_path, manifest)
    if ed_es is not None:
        for name, got, want in (("ed", det.ed, ed_es[0]), ("es", det.es, ed_es[1])):
            if want:
                mae = frame_mae(got, want, frames_n)
                summary.append([f"{name}_mae", _num(mae)])
                print(f"{name.upper()} MAE {mae:.3f} frames")
    _write_csv(out / "detections.csv", ["key", "value"], summary)
    write_svg(out / "signal.svg", signal_svg(sig.raw, sig.filtered, det.ed, det.es,
                                             deterministic=args.deterministic))
    write_svg(out / "cosine.svg", heatmap_svg(cos, deterministic=args.deterministic))
    write_svg(out / "trajectory.svg", trajectory_svg(codes.phi, det.ed, det.es,
                                                     deterministic=args.deterministic))
    print(f"ED {det.ed} ES {det.es}")
    return EXIT_OK


def cmd_walk(args) -> int:
    import numpy as np

    from .fitting import fit_video
    from .formats import read_checkpoint, read_latents, read_video, write_video
    from .phantom import estimate_radius
    from .trajectory import latent_walk

    ckpt_path = _existing_file(args.checkpoint, "checkpoint")
    video_path = _existing_file(args.video, "video")
    latents_path = _existing_file(args.latents, "latents")
    if (video_path is None) == (latents_path is None):
        raise UsageError("give exactly one of --video or --latents")
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    ckpt = read_checkpoint(ckpt_path)
    if video_path is not None:
        codes = fit_video(ckpt, read_video(video_path), args.fit_steps, args.fit_lr,
                          args.subsample, args.seed).codes
    else:
        codes = read_latents(latents_path)
    walk = latent_walk(ckpt, codes, args.samples, overshoot=args.overshoot,
                       height=args.height, width=args.width)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = np.clip(walk.frames, 0.0, 1.0)
    write_video(out / "walk.lrmv", frames)
    _write_csv(out / "walk.csv", ["alpha", "radius_px"],
               [[_num(a), _num(estimate_radius(f))] for a, f in zip(walk.alphas, frames)])
    print(f"rendered {len(walk.alphas)} frames to {out / 'walk.lrmv'}")
    return EXIT_OK


def _evaluate(ckpt, rows, args):
    from .metrics import psnr, ssim3d

    table = []
    for stem, video, res in _fit_rows(ckpt, rows, args, None):
        table.append((stem, psnr(video, res.reconstruction), ssim3d(video, res.reconstruction)))
    return table


def cmd_eval(args) -> int:
    import numpy as np

    from .formats import read_checkpoint

    ckpt_path = _existing_file(args.checkpoint, "checkpoint")
    rows = _video_rows(args)
    table = _evaluate(read_checkpoint(ckpt_path), rows, args)
    mean_p = float(np.mean([t[1] for t in table]))
    mean_s = float(np.mean([t[2] for t in table]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "eval.csv", ["video", "psnr", "ssim3d"],
               [[s, _num(p), _num(q)] for s, p, q in table] + [["mean", _num(mean_p), _num(mean_s)]])
    print(f"mean psnr {mean_p:.2f} dB, mean ssim3d {mean_s:.4f} over {len(table)} videos")
    return EXIT_OK


def cmd_ranksweep(args) -> int:
    from .plots import ranksweep_svg, write_svg
    from .training import train

    if not args.ks:
        raise UsageError("--ks needs at least one rank")
    train_rows = _dataset(_existing_dir(args.data, "training data directory"))
    test_rows = _dataset(_existing_dir(args.test_data, "held-out data directory"))
    base = _train_config(args, overrides=("outer_iters",))
    bad = [k for k in args.ks if not 1 <= k <= base.q]
    if bad:
        raise UsageError(f"ranks must lie in [1, {base.q}], got {bad}")
    videos = _load_videos(train_rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table, ok = [], []
    for k in args.ks:
        try:
            ckpt = train(videos, base.replace(k=k))
            scores = _evaluate(ckpt, test_rows, args)
            p = sum(s[1] for s in scores) / len(scores)
            s = sum(s[2] for s in scores) / len(scores)
            table.append([k, _num(p), _num(s), ""])
            ok.append((k, p, s))
            print(f"k={k}: psnr {p:.2f} dB, ssim3d {s:.4f}")
        except Exception as exc:  # record and keep sweeping
            table.append([k, "nan", "nan", f"{type(exc).__name__}: {exc}"])
            print(f"k={k}: failed: {exc}", file=sys.stderr)
    _write_csv(out / "ranksweep.csv", ["k", "psnr", "ssim3d", "error"], table)
    if ok:
        write_svg(out / "ranksweep.svg", ranksweep_svg([r[0] for r in ok], [r[1] for r in ok],
                                                       [r[2] for r in ok],
                                                       deterministic=args.deterministic))
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------- parser

def _add_fit_flags(p, default_steps, default_lr) -> None:
    p.add_argument("--fit-steps", type=int, default=default_steps)
    p.add_argument("--fit-lr", type=float, default=default_lr)
    p.add_argument("--subsample", type=int, default=0,
                   help="pixels per frame per fitting step (0 = full grid)")
    p.add_argument("--seed", type=int, default=0)


def _add_train_flags(p) -> None:
    p.add_argument("--config", help="flat 'key = value' training config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--k", type=int)
    p.add_argument("--outer-iters", dest="outer_iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    from .fitting import DEFAULT_FIT_LR as fit_lr, DEFAULT_FIT_STEPS as fit_steps

    parser = argparse.ArgumentParser(prog="lrm-functa",
                                     description="Low-rank modulated video INRs and phase analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a phantom suite and its manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--period-min", type=float, default=10.0)
    p.add_argument("--period-max", type=float, default=20.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="meta-train backbone and subspace")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="encode videos with a frozen checkpoint")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--video", nargs="+")
    p.add_argument("--out", required=True)
    _add_fit_flags(p, fit_steps, fit_lr)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("analyze", help="phase signal and ED/ES detection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video")
    p.add_argument("--latents")
    p.add_argument("--out", required=True)
    p.add_argument("--orient", choices=("pca-sign", "intensity"), default="pca-sign")
    p.add_argument("--savgol-window", type=int, default=7)
    p.add_argument("--savgol-order", type=int, default=2)
    p.add_argument("--detrend-window", type=int)
    p.add_argument("--period", type=float, help="expected period in frames (sets the detrend window)")
    p.add_argument("--prominence", type=float, default=0.5, help="fraction of the signal std")
    p.add_argument("--ed", type=_int_list, help="labelled ED frames, for MAE")
    p.add_argument("--es", type=_int_list, help="labelled ES frames, for MAE")
    p.add_argument("--manifest", help="manifest holding labels for --video")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--deterministic", action="store_true", help="omit SVG timestamps")
    _add_fit_flags(p, fit_steps, fit_lr)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("walk", help="render frames along the first principal axis of the codes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video")
    p.add_argument("--latents")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=9)
    p.add_argument("--overshoot", type=float, default=1.0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    _add_fit_flags(p, fit_steps, fit_lr)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("eval", help="fit videos and report PSNR and SSIM3D")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--video", nargs="+")
    p.add_argument("--out", required=True)
    _add_fit_flags(p, fit_steps, fit_lr)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ranksweep", help="train and evaluate one model per rank k")
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--ks", type=_int_list, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--outer-iters", dest="outer_iters", type=int)
    _add_fit_flags(p, fit_steps, fit_lr)
    p.set_defaults(func=cmd_ranksweep)
    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
    except UsageError as exc:
        print(f"lrm-functa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
