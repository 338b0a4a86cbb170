import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrm_functa.fitting import compression_stats, fit_video, full_grid_loss, reconstruct
from lrm_functa.lowrank import LatentCodes
from lrm_functa.model import render_frames
from lrm_functa.numerics import make_rng
from lrm_functa.phantom import PhantomConfig, generate_phantom
from lrm_functa.training import TrainConfig, train


@pytest.fixture(scope="module")
def ckpt():
    videos = [generate_phantom(PhantomConfig(T=6, H=12, W=12, period=p, seed=s))[0]
              for p, s in ((4.0, 1), (5.0, 2))]
    return train(videos, TrainConfig(hidden_width=12, hidden_layers=2, q=12, k=2, outer_iters=5,
                                     batch_videos=2, coord_subsample=48))


@pytest.fixture(scope="module")
def video():
    return generate_phantom(PhantomConfig(T=6, H=12, W=12, period=4.5, seed=9))[0]


def test_backbone_untouched_bitwise(ckpt, video):
    before = ckpt.params.data.copy()
    grads_before = ckpt.params.grads.copy()
    fit_video(ckpt, video, fit_steps=5)
    assert np.array_equal(ckpt.params.data, before)
    assert np.array_equal(ckpt.params.grads, grads_before)


def test_zero_steps_renders_unmodulated_backbone(ckpt, video):
    res = fit_video(ckpt, video, fit_steps=0)
    assert not res.codes.v.any() and not res.codes.phi.any()
    plain = render_frames(ckpt.params, ckpt.config, np.zeros((6, ckpt.config.q)), 12, 12)
    assert np.array_equal(res.reconstruction, np.clip(plain, 0, 1))
    assert res.fit_steps == 0 and len(res.losses) == 1


def test_fit_result_shapes_and_losses(ckpt, video):
    res = fit_video(ckpt, video, fit_steps=4)
    assert res.reconstruction.shape == video.shape
    assert res.codes.phi.shape == (6, 2) and res.codes.v.shape == (ckpt.config.q,)
    assert len(res.losses) == 5
    assert all(np.isfinite(x) and x >= 0 for x in res.losses)


def test_same_seed_same_codes(ckpt, video):
    a = fit_video(ckpt, video, fit_steps=3, subsample=40, seed=5)
    b = fit_video(ckpt, video, fit_steps=3, subsample=40, seed=5)
    assert np.array_equal(a.codes.v, b.codes.v) and np.array_equal(a.codes.phi, b.codes.phi)


def test_small_rate_descends(ckpt):
    ok = 0
    rng = make_rng(3)
    videos = [generate_phantom(PhantomConfig(T=6, H=12, W=12, period=float(rng.uniform(3, 6)),
                                             seed=int(rng.integers(1 << 30))))[0] for _ in range(20)]
    for v in videos:
        losses = fit_video(ckpt, v, fit_steps=6, fit_lr=1e-3).losses[:-1]
        ok += all(b <= a for a, b in zip(losses, losses[1:]))
    assert ok >= 0.95 * len(videos)


def test_reconstruct_and_loss_agree(ckpt, video):
    res = fit_video(ckpt, video, fit_steps=2)
    recon = reconstruct(ckpt, res.codes, 12, 12)
    assert full_grid_loss(ckpt, res.codes, video) == pytest.approx(np.mean((recon - video) ** 2))


def test_out_of_range_video_rejected(ckpt):
    with pytest.raises(ValueError):
        fit_video(ckpt, np.full((2, 12, 12), 1.5))


def test_compression_examples():
    low = compression_stats((100, 112, 112), 256, 2)
    assert (low.original_values, low.code_values) == (1_254_400, 456)
    assert low.ratio == pytest.approx(2750.877, abs=1e-3)
    high = compression_stats((100, 112, 112), 256, 512)
    assert high.code_values == 51_456
    assert high.ratio == pytest.approx(24.378, abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 300))
def test_single_frame_full_rank_ratio(h, w, q):
    assert compression_stats((1, h, w), q, q).ratio == pytest.approx(h * w / (2 * q), rel=1e-15)


def test_compression_rejects_zero_dims():
    with pytest.raises(ValueError):
        compression_stats((0, 4, 4), 8, 2)


def test_codes_zero_helper():
    z = LatentCodes.zeros(5, 2, 3)
    assert z.v.shape == (5,) and z.phi.shape == (3, 2)


def test_static_disk_gives_no_detections(ckpt):
    from lrm_functa.numerics import DegenerateInputError
    from lrm_functa.trajectory import detect_extrema, extract_signal

    cfg = PhantomConfig(T=8, H=12, W=12, amplitude=0.0, drift=0.0, noise=0.0)
    video, ed, es = generate_phantom(cfg)
    assert ed == [] and es == []
    phi = fit_video(ckpt, video, fit_steps=5).codes.phi
    try:
        det = detect_extrema(extract_signal(phi))
    except DegenerateInputError:
        return
    assert det.ed == [] and det.es == []
