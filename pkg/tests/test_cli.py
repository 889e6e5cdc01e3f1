import json
from pathlib import Path


from nldf.cli import main
from nldf.imageio import read_ppm

ROOT = Path(__file__).resolve().parents[1]
SMOKE = str(ROOT / "configs" / "smoke.json")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_render_teacher_twice_bit_identical(tmp_path, capsys):
    for d in ("a", "b"):
        code, _, _ = run(capsys, "render-teacher", "--config", SMOKE, "--run-dir", str(tmp_path / d), "--frames", "0,5")
        assert code == 0
    for f in ("teacher_0000.ppm", "teacher_0005.ppm"):
        assert (tmp_path / "a/frames" / f).read_bytes() == (tmp_path / "b/frames" / f).read_bytes()
    assert read_ppm(tmp_path / "a/frames/teacher_0000.ppm").width == 16


def test_run_dir_is_self_describing(tmp_path, capsys):
    code, out, _ = run(capsys, "scene", "gen", "--config", SMOKE, "--run-dir", str(tmp_path))
    assert code == 0
    for name in ("config.json", "inputs.sha256", "report.json", "scene.json", "signal.csv"):
        assert (tmp_path / name).exists(), name
    digest = (tmp_path / "inputs.sha256").read_text().strip()
    assert last_json(out)["content_hash"] == digest
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["camera"]["width"] == 16


def test_eval_frame_against_itself(tmp_path, capsys):
    run(capsys, "render-teacher", "--config", SMOKE, "--run-dir", str(tmp_path))
    frame = str(tmp_path / "frames/teacher_0000.ppm")
    code, out, _ = run(capsys, "eval", "--pred", frame, "--ref", frame, "--run-dir", str(tmp_path / "ev"))
    assert code == 0
    rep = json.loads((tmp_path / "ev/report.json").read_text())
    assert rep["psnr_db"] == [99.0] and rep["ssim"] == [1.0] and rep["identical"] == [True]
    assert (tmp_path / "ev/metrics.csv").read_text().splitlines()[0] == "frame,psnr_db,ssim"


def test_eval_directories(tmp_path, capsys):
    run(capsys, "render-teacher", "--config", SMOKE, "--run-dir", str(tmp_path / "a"), "--frames", "0:3")
    code, _, _ = run(capsys, "eval", "--pred", str(tmp_path / "a/frames"), "--ref", str(tmp_path / "a/frames"),
                     "--run-dir", str(tmp_path / "ev"))
    assert code == 0
    assert len(json.loads((tmp_path / "ev/report.json").read_text())["psnr_db"]) == 3


def test_bench_untrained_default_ratio(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "--untrained", "--frames", "1", "--run-dir", str(tmp_path))
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["eval_ratio"] == 64.0
    assert rep["teacher"]["field_evals"] == 262144 and rep["student"]["forward_calls"] == 4096


def test_distill_render_and_eval_checkpoint(tmp_path, capsys):
    rd = str(tmp_path)
    code, out, _ = run(capsys, "distill", "--config", SMOKE, "--run-dir", rd, "--deterministic", "--iterations", "6")
    assert code == 0
    for name in ("metrics.csv", "timings.csv", "checkpoints/final.ckpt", "report.json", "config.json"):
        assert (tmp_path / name).exists(), name
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["iterations"] == 6 and rep["optimizer_steps"] == 12  # replay adds one step per iteration
    assert "wall_seconds" not in rep
    ck = str(tmp_path / "checkpoints/final.ckpt")
    code, _, _ = run(capsys, "render-student", "--config", SMOKE, "--run-dir", rd, "--checkpoint", ck, "--frames", "9")
    assert code == 0 and (tmp_path / "frames/student_0009.ppm").exists()
    code, out, _ = run(capsys, "eval", "--config", SMOKE, "--run-dir", rd, "--checkpoint", ck)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["heldout_frames"] == [8, 9, 10, 11]
    assert len(rep["frames"]["psnr_db"]) == 4 and rep["psnr_db"] == rep["frames"]["mean_psnr_db"]


def test_config_errors_single_json_line(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"camera": {"width": 0}, "render": {"N": 30}, "train": {"bogus": 1}}))
    code, out, err = run(capsys, "distill", "--config", str(bad))
    assert code == 2 and out == ""
    lines = err.strip().splitlines()
    msg = json.loads(lines[-1])
    assert msg["error"] == "config" and len(msg["messages"]) == 3
    assert all(m.startswith(str(bad)) for m in msg["messages"])


def test_runtime_errors_are_machine_parsable(tmp_path, capsys):
    code, _, err = run(capsys, "render-student", "--config", SMOKE, "--run-dir", str(tmp_path))
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "usage"
    code, _, err = run(capsys, "eval", "--pred", str(tmp_path / "nope.ppm"), "--ref", str(tmp_path / "nope.ppm"),
                       "--run-dir", str(tmp_path / "ev"))
    assert code == 1 and "error" in json.loads(err.strip().splitlines()[-1])
    code, _, err = run(capsys, "render-teacher", "--config", SMOKE, "--run-dir", str(tmp_path), "--frames", "99")
    assert code == 1 and "outside" in json.loads(err.strip().splitlines()[-1])["messages"][0]


def test_gradcheck_command(tmp_path, capsys):
    code, out, _ = run(capsys, "gradcheck", "--max-coords", "3", "--run-dir", str(tmp_path))
    assert code == 0
    assert last_json(out)["passed"] is True
    assert json.loads((tmp_path / "report.json").read_text())["max_rel_error"] < 1e-4
