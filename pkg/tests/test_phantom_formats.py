import numpy as np
import pytest

from lrm_functa.formats import (
    BadMagicError, ChecksumError, Checkpoint, TruncatedFileError, decode_latents,
    encode_latents, read_checkpoint, write_checkpoint,
)
from lrm_functa.lowrank import LatentCodes
from lrm_functa.phantom import (
    PhantomConfig, SuiteSpec, disk_fill, estimate_radius, generate_phantom, phantom_suite, radius_px, read_video,
    write_video,
)
from lrm_functa.training import TrainConfig, init_params


def test_analytic_labels_p16():
    _, ed, es = generate_phantom(PhantomConfig(T=48, H=32, W=32, period=16, phase=0.0, noise=0.0))
    assert es == [12, 28, 44]
    assert ed == [4, 20, 36]


def test_static_disk_has_no_labels():
    video, ed, es = generate_phantom(PhantomConfig(amplitude=0.0, noise=0.0, T=8, H=16, W=16))
    assert ed == [] and es == []
    assert np.array_equal(video[0], video[-1])


def test_disk_area_matches_radius():
    cfg = PhantomConfig(T=20, H=64, W=64, period=13, noise=0.0, drift=0.0)
    for t in range(cfg.T):
        area = disk_fill(cfg, t).sum()
        expected = np.pi * radius_px(cfg, t) ** 2
        assert abs(area - expected) / expected < 0.05


def test_generation_deterministic_and_in_range():
    cfg = PhantomConfig(T=12, H=24, W=24, noise=0.2, drift=0.3, seed=4)
    a, ed, es = generate_phantom(cfg)
    b, _, _ = generate_phantom(cfg)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


@pytest.mark.parametrize("seed", range(5))
def test_labels_alternate_half_period_apart(seed):
    for cfg in phantom_suite(SuiteSpec(count=6, T=64, seed=seed)):
        _, ed, es = generate_phantom(cfg)
        events = sorted([(t, "ed") for t in ed] + [(t, "es") for t in es])
        for (t0, k0), (t1, k1) in zip(events, events[1:]):
            assert k0 != k1
            assert abs((t1 - t0) - cfg.period / 2) <= 1.0


@pytest.mark.parametrize("bad", [
    dict(amplitude=0.3, base_radius=0.25),
    dict(base_radius=0.45, amplitude=0.1),
    dict(period=2.0),
    dict(noise=-0.1),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        generate_phantom(PhantomConfig(T=4, H=8, W=8, **bad))


def test_video_roundtrip_bitwise(tmp_path):
    video = np.random.default_rng(0).uniform(size=(3, 5, 7))
    write_video(tmp_path / "v.lrmv", video)
    back = read_video(tmp_path / "v.lrmv")
    assert back.tobytes() == video.tobytes()


def test_video_errors(tmp_path):
    path = tmp_path / "v.lrmv"
    write_video(path, np.zeros((2, 3, 3)))
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(TruncatedFileError):
        read_video(path)
    corrupt = bytearray(raw)
    corrupt[40] ^= 0xFF
    path.write_bytes(bytes(corrupt))
    with pytest.raises(ChecksumError):
        read_video(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        read_video(path)


def test_latent_roundtrip():
    codes = LatentCodes(np.arange(4.0), np.arange(6.0).reshape(3, 2))
    raw = encode_latents(codes)
    assert raw[:4] == b"LRML" and len(raw) == 16 + 8 * (4 + 6)
    back = decode_latents(raw)
    assert np.array_equal(back.v, codes.v) and np.array_equal(back.phi, codes.phi)
    with pytest.raises(TruncatedFileError):
        decode_latents(raw[:-1])


def test_checkpoint_roundtrip(tmp_path):
    tcfg = TrainConfig(hidden_width=4, hidden_layers=2, q=8, k=3, omega0=12.5)
    params = init_params(tcfg)
    ckpt = Checkpoint(tcfg.backbone, tcfg.k, params, {"train_config": tcfg.as_dict()})
    write_checkpoint(tmp_path / "m.lrmc", ckpt)
    back = read_checkpoint(tmp_path / "m.lrmc")
    assert back.config == tcfg.backbone and back.k == 3
    assert back.params.layout == params.layout
    assert back.params.data.tobytes() == params.data.tobytes()
    assert back.meta["train_config"]["k"] == 3


def test_estimate_radius_tracks_true_radius():
    cfg = PhantomConfig(T=16, H=64, W=64, period=8.0, noise=0.0, drift=0.0)
    video, _, _ = generate_phantom(cfg)
    for t in range(cfg.T):
        assert abs(estimate_radius(video[t]) - radius_px(cfg, t)) < 1.0
