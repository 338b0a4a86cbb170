import csv

import numpy as np
import pytest

from lrm_functa.cli import main
from lrm_functa.formats import read_latents, read_video

TINY = ["--set", "hidden_width=12", "--set", "hidden_layers=2", "--set", "q=12",
        "--set", "coord_subsample=48", "--set", "batch_videos=2", "--outer-iters", "6"]
FIT = ["--fit-steps", "5", "--subsample", "64"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    gen = ["--count", "3", "--frames", "12", "--size", "14", "--period-min", "4", "--period-max", "6"]
    assert run("gen", "--out", root / "train", *gen, "--seed", "1") == 0
    assert run("gen", "--out", root / "test", *gen, "--seed", "2") == 0
    assert run("train", "--data", root / "train", "--out", root / "run", *TINY) == 0
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_manifest(work):
    rows = read_csv(work / "train" / "manifest.csv")
    assert [r["path"] for r in rows] == ["phantom_000.lrmv", "phantom_001.lrmv", "phantom_002.lrmv"]
    video = read_video(work / "train" / rows[0]["path"])
    assert video.shape == (12, 14, 14)
    assert all(r["ed"] and r["es"] for r in rows)


def test_train_outputs(work):
    rows = read_csv(work / "run" / "loss_curve.csv")
    assert [int(r["iteration"]) for r in rows] == list(range(6))
    assert "k = 2" in (work / "run" / "config.txt").read_text()


@pytest.mark.parametrize("command", ["gen", "train", "fit", "analyze", "eval"])
def test_csv_outputs_are_reproducible(work, tmp_path, command):
    ckpt = work / "run" / "checkpoint.lrmc"
    outputs = []
    for rep in range(2):
        out = tmp_path / f"r{rep}"
        if command == "gen":
            assert run("gen", "--out", out, "--count", "2", "--frames", "8", "--size", "12", "--seed", "4") == 0
            names = ["manifest.csv"]
        elif command == "train":
            assert run("train", "--data", work / "train", "--out", out, *TINY) == 0
            names = ["loss_curve.csv"]
        elif command == "fit":
            assert run("fit", "--checkpoint", ckpt, "--data", work / "test", "--out", out, *FIT) == 0
            names = ["fit.csv"]
        elif command == "analyze":
            assert run("analyze", "--checkpoint", ckpt, "--video", work / "test" / "phantom_000.lrmv",
                       "--out", out, "--deterministic", *FIT) == 0
            names = ["signals.csv", "cosine.csv", "detections.csv", "signal.svg", "cosine.svg",
                     "trajectory.svg"]
        else:
            assert run("eval", "--checkpoint", ckpt, "--data", work / "test", "--out", out, *FIT) == 0
            names = ["eval.csv"]
        outputs.append([(out / n).read_bytes() for n in names])
    assert outputs[0] == outputs[1]


def test_svg_timestamp_only_without_deterministic(work, tmp_path):
    ckpt = work / "run" / "checkpoint.lrmc"
    video = work / "test" / "phantom_001.lrmv"
    assert run("analyze", "--checkpoint", ckpt, "--video", video, "--out", tmp_path / "a", *FIT) == 0
    assert run("analyze", "--checkpoint", ckpt, "--video", video, "--out", tmp_path / "b",
               "--deterministic", *FIT) == 0
    assert "generated" in (tmp_path / "a" / "signal.svg").read_text()
    assert "generated" not in (tmp_path / "b" / "signal.svg").read_text()
    assert (tmp_path / "a" / "signals.csv").read_bytes() == (tmp_path / "b" / "signals.csv").read_bytes()


def test_fit_writes_latents_and_reconstruction(work, tmp_path):
    ckpt = work / "run" / "checkpoint.lrmc"
    assert run("fit", "--checkpoint", ckpt, "--video", work / "test" / "phantom_001.lrmv",
               "--out", tmp_path, *FIT) == 0
    codes = read_latents(tmp_path / "phantom_001.lrml")
    assert codes.phi.shape == (12, 2)
    assert read_video(tmp_path / "phantom_001_recon.lrmv").shape == (12, 14, 14)
    row = read_csv(tmp_path / "fit.csv")[0]
    assert float(row["ratio"]) == pytest.approx(12 * 14 * 14 / (12 + 12 * 2))


def test_orientations_agree_up_to_swap(work, tmp_path):
    ckpt = work / "run" / "checkpoint.lrmc"
    assert run("fit", "--checkpoint", ckpt, "--data", work / "test", "--out", tmp_path / "fit", *FIT) == 0
    latents = tmp_path / "fit" / "phantom_000.lrml"
    got = {}
    for orient in ("pca-sign", "intensity"):
        out = tmp_path / orient
        assert run("analyze", "--checkpoint", ckpt, "--latents", latents, "--out", out,
                   "--orient", orient, "--height", "14", "--width", "14") == 0
        rows = read_csv(out / "signals.csv")
        got[orient] = ({int(r["frame_index"]) for r in rows if r["is_ed"] == "1"},
                       {int(r["frame_index"]) for r in rows if r["is_es"] == "1"})
    a, b = got["pca-sign"], got["intensity"]
    assert a == b or a == (b[1], b[0])


def test_analyze_reports_mae_from_manifest(work, tmp_path, capsys):
    ckpt = work / "run" / "checkpoint.lrmc"
    assert run("analyze", "--checkpoint", ckpt, "--video", work / "test" / "phantom_000.lrmv",
               "--manifest", work / "test" / "manifest.csv", "--out", tmp_path, *FIT) == 0
    keys = {r["key"] for r in read_csv(tmp_path / "detections.csv")}
    assert {"ed_mae", "es_mae"} <= keys
    assert "MAE" in capsys.readouterr().out


def test_walk_outputs(work, tmp_path):
    ckpt = work / "run" / "checkpoint.lrmc"
    assert run("walk", "--checkpoint", ckpt, "--video", work / "test" / "phantom_000.lrmv",
               "--out", tmp_path, "--samples", "4", "--height", "14", "--width", "14", *FIT) == 0
    assert read_video(tmp_path / "walk.lrmv").shape == (4, 14, 14)
    assert len(read_csv(tmp_path / "walk.csv")) == 4


def test_ranksweep_single_rank_matches_standalone(work, tmp_path):
    assert run("ranksweep", "--data", work / "train", "--test-data", work / "test", "--ks", "2",
               "--out", tmp_path / "rs", "--deterministic", *TINY, *FIT) == 0
    row = read_csv(tmp_path / "rs" / "ranksweep.csv")[0]
    assert run("eval", "--checkpoint", work / "run" / "checkpoint.lrmc", "--data", work / "test",
               "--out", tmp_path / "ev", *FIT) == 0
    mean = read_csv(tmp_path / "ev" / "eval.csv")[-1]
    assert (row["k"], row["psnr"], row["ssim3d"]) == ("2", mean["psnr"], mean["ssim3d"])
    svg = (tmp_path / "rs" / "ranksweep.svg").read_text()
    assert svg.startswith("<svg") and "generated" not in svg


def test_ranksweep_records_failing_rank(work, tmp_path):
    # frames smaller than the SSIM window make every evaluation fail
    assert run("gen", "--out", tmp_path / "small", "--count", "1", "--frames", "8", "--size", "6") == 0
    assert run("ranksweep", "--data", work / "train", "--test-data", tmp_path / "small", "--ks", "1,2",
               "--out", tmp_path / "rs", *TINY, *FIT) == 1
    rows = read_csv(tmp_path / "rs" / "ranksweep.csv")
    assert [r["k"] for r in rows] == ["1", "2"]
    assert all("window" in r["error"] and r["psnr"] == "nan" for r in rows)


@pytest.mark.parametrize("argv", [
    ["ranksweep", "--data", ".", "--test-data", ".", "--ks", "", "--out", "x"],
    ["analyze", "--checkpoint", "/no/such/file", "--video", "v.lrmv", "--out", "x"],
    ["fit", "--checkpoint", "/no/such/file", "--video", "v.lrmv", "--out", "x"],
    ["train", "--data", "/no/such/dir", "--out", "x"],
    ["bogus"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_thread_cap_is_usage_error(monkeypatch):
    monkeypatch.setenv("LRM_THREADS", "0")
    assert main(["gen", "--out", "x"]) == 2


def test_degenerate_trajectory_exits_1(work, tmp_path, capsys):
    from lrm_functa.formats import write_latents
    from lrm_functa.lowrank import LatentCodes

    write_latents(tmp_path / "flat.lrml", LatentCodes(np.zeros(12), np.ones((10, 2))))
    assert run("analyze", "--checkpoint", work / "run" / "checkpoint.lrmc",
               "--latents", tmp_path / "flat.lrml", "--out", tmp_path / "o") == 1
    assert "degenerate" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_1(work, tmp_path):
    bad = tmp_path / "bad.lrmc"
    bad.write_bytes(b"LRMC" + b"\0" * 10)
    assert run("fit", "--checkpoint", bad, "--data", work / "test", "--out", tmp_path / "o") == 1
