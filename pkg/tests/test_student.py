import numpy as np
import pytest

from nldf import autodiff as ad
from nldf.conditioning import FusionModule, fuse_window, generate_signal
from nldf.geometry import Camera, ConfigError, Pose, encode_beam, pixel_ray
from nldf.render import render_frame_teacher
from nldf.student import (
    ForwardCounter, NLDFConfig, NLDFModel, nldf_forward, nldf_pixel, render_frame_student,
)
from nldf.teacher import AnalyticScene, default_talking_scene
from nldf.training import loss_r, loss_rs, total_loss


def small(**kw):
    base = dict(blocks=2, width=32, cond_dim=4)
    base.update(kw)
    return NLDFConfig(**base)


def some_beam(K=16):
    cam = Camera.centered(Pose.look_at([0, 0, 4.0]), 8, 8, 8)
    return encode_beam(pixel_ray(cam, 3.5, 2.5, 2.0, 6.0), K)


def test_config_validation_lists_everything():
    errs = NLDFConfig(K=1, M=0, blocks=0, width=2, cond_dim=-1, output_activation="relu").validate()
    assert len(errs) == 5
    assert NLDFConfig(width=11).validate() == ["model.width must be >= 3*M = 12 (got 11)"]
    with pytest.raises(ConfigError):
        NLDFModel(NLDFConfig(K=1))


def test_zero_head_gives_half_and_saturated_pixel():
    model = NLDFModel(small(head_bias_prior=0.5), seed=0)
    seg = nldf_forward(model, some_beam(), np.zeros(4))
    np.testing.assert_array_equal(seg.colors, 0.5)
    np.testing.assert_array_equal(nldf_pixel(model, some_beam(), np.zeros(4)).rgb, [1, 1, 1])


def test_default_prior_sets_initial_output():
    model = NLDFModel(small(), seed=0)
    seg = nldf_forward(model, some_beam(), np.zeros(4))
    np.testing.assert_allclose(seg.colors, 0.1, rtol=1e-12)


def test_single_segment_pixel_is_segment():
    model = NLDFModel(small(M=1, cond_dim=0), seed=1)
    model.head.W.data[...] = np.random.default_rng(0).normal(0, 0.3, model.head.W.shape)
    seg = nldf_forward(model, some_beam(), [])
    np.testing.assert_array_equal(nldf_pixel(model, some_beam(), []).rgb, seg.colors[0])


def randomized(cfg, seed=0, scale=0.2):
    model = NLDFModel(cfg, seed=seed)
    r = np.random.default_rng(seed + 100)
    for p in model.parameters():
        p.data[...] = r.normal(0, scale, p.shape)
    return model


def test_outputs_strictly_inside_unit_interval_and_deterministic():
    model = randomized(small())
    beams = np.random.default_rng(1).normal(0, 3, (200, 48))
    cond = np.random.default_rng(2).normal(0, 3, (200, 4))
    a = model.segments(beams, cond).data
    b = model.segments(beams, cond).data
    assert a.shape == (200, 4, 3)
    assert np.all((a > 0) & (a < 1))
    np.testing.assert_array_equal(a, b)


def test_dimension_mismatch():
    model = NLDFModel(small(), seed=0)
    with pytest.raises(ConfigError):
        nldf_forward(model, some_beam(8), np.zeros(4))
    with pytest.raises(ConfigError):
        nldf_forward(model, some_beam(), np.zeros(3))


def test_same_seed_same_parameters():
    a, b = NLDFModel(small(), seed=7), NLDFModel(small(), seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_frame_forward_count_and_ratio():
    cam = Camera.centered(Pose.look_at([0, 0, 4.0]), 64, 64, 64)
    sig = generate_signal("sinusoid-mixture", 3, 4, 0)
    fusion = FusionModule(4, 4, seed=0)
    ctr = ForwardCounter()
    img, fwd = render_frame_student(NLDFModel(small(), 0), cam, sig, 1, fusion, ctr)
    assert fwd == 4096 and ctr.count == 4096
    assert img.pixels.shape == (64, 64, 3)
    _, evals = render_frame_teacher(default_talking_scene(0, 4), cam, sig.frames[1], N=64)
    assert evals == 262_144
    assert evals / fwd == 64.0


def test_forward_count_independent_of_content():
    cam = Camera.centered(Pose.look_at([0, 0, 4.0]), 12, 10, 12)
    counts = {render_frame_student(randomized(small(), s), cam, None, 0)[1] for s in range(3)}
    assert counts == {120}


def test_conditioning_continuity():
    model = randomized(small())
    cam = Camera.centered(Pose.look_at([0, 0, 4.0]), 8, 8, 8)
    a = np.array([0.1, -0.2, 0.3, 0.0])
    base, _ = render_frame_student(model, cam, None, 0, cond=a)
    prev = np.inf
    for h in (1e-1, 1e-2, 1e-3):
        moved, _ = render_frame_student(model, cam, None, 0, cond=a + h)
        change = np.abs(moved.pixels - base.pixels).max()
        assert change <= prev
        prev = change
    assert prev < 1e-2


def test_full_pipeline_gradient():
    sig = generate_signal("sinusoid-mixture", 6, 3, seed=1)
    fusion = FusionModule(3, 4, window=1, seed=2)
    model = NLDFModel(small(blocks=4), seed=3)
    r = np.random.default_rng(4)
    for p in model.parameters():
        p.data += r.normal(0, 0.1, p.shape)
    beams = r.normal(0, 1, (6, 48))
    seg_t = r.random((6, 4, 3)) * 0.25
    gt = seg_t.sum(axis=1)

    def fn():
        seg = model.segments(beams, fuse_window(fusion, sig, 2))
        return total_loss(loss_r(seg.sum(axis=1), gt), loss_rs(seg, seg_t), 0.2)

    params = model.parameters() + fusion.parameters()
    assert ad.grad_check(fn, params, max_coords=12) < 1e-4


def test_empty_scene_distils_to_black_quickly():
    # sanity: with a black teacher the head only needs to push the bias down
    model = NLDFModel(small(cond_dim=0), seed=0)
    beams = np.random.default_rng(0).normal(0, 1, (64, 48))
    for _ in range(200):
        model.zero_grad()
        seg = model.segments(beams, np.zeros(0))
        loss_r(seg.sum(axis=1), np.zeros((64, 3))).backward()
        ad.adam_step(model.parameters(), 1e-2)
    pix = model.segments(beams, np.zeros(0)).data.sum(axis=1)
    assert pix.max() < 0.05
    assert AnalyticScene().drive_dim == 0


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_tape_free_inference_matches_taped_forward(dtype):
    model = NLDFModel(small(), seed=3, dtype=dtype)
    rng = np.random.default_rng(0)
    for p in model.parameters():
        p.data += rng.normal(0, 0.2, p.shape).astype(dtype)
    beams = rng.normal(size=(37, 48))
    shared = rng.normal(size=4)
    per_ray = rng.normal(size=(37, 4))
    tol = 1e-12 if dtype == np.float64 else 1e-5
    for cond in (shared, per_ray):
        with ad.no_grad():
            taped = model.segments(beams, cond).data
        np.testing.assert_allclose(model.infer(beams, cond), taped, atol=tol, rtol=0)
