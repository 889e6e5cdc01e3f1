import pytest

from nldf.bench import bench
from nldf.conditioning import FusionModule, generate_signal
from nldf.geometry import Camera, Pose
from nldf.student import NLDFConfig, NLDFModel
from nldf.teacher import default_talking_scene


def setup(W=16, H=12, frames=4):
    sig = generate_signal("sinusoid-mixture", frames, 4, 0)
    cams = [Camera.centered(Pose.look_at([0, 0, 4.0]), W, W, H)] * frames
    model = NLDFModel(NLDFConfig(blocks=1, width=16, cond_dim=8), seed=0)
    fusion = FusionModule(4, 8, 1, seed=0)
    return default_talking_scene(0), model, fusion, sig, cams


@pytest.mark.parametrize("N,F", [(16, 2), (32, 3), (64, 1)])
def test_structural_counts(N, F):
    scene, model, fusion, sig, cams = setup()
    rep = bench(scene, model, fusion, sig, cams, N=N, frames=F)
    assert rep.teacher.evals == 16 * 12 * N * F
    assert rep.student.evals == 16 * 12 * F
    assert rep.eval_ratio == float(N)
    assert rep.wallclock_speedup > 0


def test_report_dict_names():
    scene, model, fusion, sig, cams = setup()
    d = bench(scene, model, fusion, sig, cams, N=8, frames=1).to_dict()
    assert d["teacher"]["field_evals"] == 16 * 12 * 8
    assert d["student"]["forward_calls"] == 16 * 12
    assert d["eval_ratio"] == d["teacher"]["field_evals"] / d["student"]["forward_calls"]
    assert "cores" in d["hardware"]


def test_static_scene_bench_without_drive():
    from nldf.teacher import static_scene
    _, model, fusion, sig, cams = setup()
    rep = bench(static_scene(0), model, fusion, sig, cams, N=8, frames=2)
    assert rep.eval_ratio == 8.0
