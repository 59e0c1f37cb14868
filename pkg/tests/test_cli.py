import json

import numpy as np
import pytest

from flowpose.cli import main
from flowpose import fileio


def _synth(tmp_path, name="gt", seed=30, frames=3, size=32):
    out = tmp_path / name
    assert main(["synth", "--out", str(out), "--seed", str(seed),
                 "--frames", str(frames), "--width", str(size),
                 "--height", str(size)]) == 0
    return out


def test_synth_perturb_eval_roundtrip(tmp_path, capsys):
    gt = _synth(tmp_path)
    noisy = tmp_path / "noisy"
    assert main(["perturb", "--in", str(gt), "--out", str(noisy),
                 "--pose-sigma", "0.02", "--det-sigma", "0.5",
                 "--seed", "7"]) == 0
    capsys.readouterr()
    assert main(["eval", "--pred", str(gt), "--gt", str(gt)]) == 0
    out = capsys.readouterr().out
    assert "MPJPE (mm)  all     0.000000" in out
    assert "EPE (px)    all     0.000000" in out
    assert main(["eval", "--pred", str(noisy), "--gt", str(gt)]) == 0
    out = capsys.readouterr().out
    assert "0.000000" not in out.splitlines()[0]


def test_bootstrap_empty_schedule_outputs_equal_inputs(tmp_path):
    gt = _synth(tmp_path)
    cfg = fileio.RunConfig(schedule=__import__("flowpose").CycleSchedule(()))
    cfg_path = tmp_path / "cfg.json"
    fileio.write_config(cfg_path, cfg)
    out = tmp_path / "out"
    assert main(["bootstrap", "--config", str(cfg_path), "--in", str(gt),
                 "--out", str(out)]) == 0
    for name in ("pose.json", "camera.json", "detections.json",
                 "topology.json", "meta.json"):
        assert (out / name).read_bytes() == (gt / name).read_bytes()
    for flo in sorted((gt / "flows").glob("*.flo")):
        assert (out / "flows" / flo.name).read_bytes() == flo.read_bytes()
    report = json.loads((out / "report.json").read_text())
    assert report["stages"] == []


def test_bootstrap_short_schedule_and_report(tmp_path, capsys):
    gt = _synth(tmp_path)
    noisy = tmp_path / "noisy"
    main(["perturb", "--in", str(gt), "--out", str(noisy),
          "--pose-sigma", "0.02", "--seed", "3"])
    doc = fileio.config_to_dict(fileio.RunConfig())
    doc["schedule"] = [{"kind": "flow", "epochs": 2},
                       {"kind": "pose", "epochs": 50}]
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(doc))
    out = tmp_path / "out"
    capsys.readouterr()
    assert main(["bootstrap", "--config", str(cfg_path), "--in", str(noisy),
                 "--out", str(out), "--gt", str(gt)]) == 0
    printed = capsys.readouterr().out
    assert "stage 0 flow" in printed and "stage 1 pose" in printed
    report = json.loads((out / "report.json").read_text())
    assert len(report["stages"]) == 2
    assert report["stages"][1]["mpjpe"] is not None


def test_refine_flow_and_pose_commands(tmp_path):
    gt = _synth(tmp_path)
    noisy = tmp_path / "noisy"
    main(["perturb", "--in", str(gt), "--out", str(noisy),
          "--pose-sigma", "0.01", "--seed", "5"])
    out1 = tmp_path / "rf"
    assert main(["refine-flow", "--in", str(noisy), "--out", str(out1),
                 "--epochs", "2"]) == 0
    assert (out1 / "flows" / "flow_000000.flo").exists()
    out2 = tmp_path / "rp"
    assert main(["refine-pose", "--in", str(noisy), "--out", str(out2),
                 "--epochs", "20"]) == 0
    pose, _ = fileio.read_track(out2 / "pose.json")
    assert pose.frames == 3


def test_avg_tracks_and_flow_dirs(tmp_path):
    gt = _synth(tmp_path, name="a", seed=1)
    gt2 = _synth(tmp_path, name="b", seed=2)
    out = tmp_path / "avg.json"
    assert main(["avg", str(gt / "pose.json"), str(gt2 / "pose.json"),
                 "--out", str(out)]) == 0
    a, _ = fileio.read_track(gt / "pose.json")
    b, _ = fileio.read_track(gt2 / "pose.json")
    avg, _ = fileio.read_track(out)
    assert np.array_equal(avg.positions, (a.positions + b.positions) / 2)
    flow_out = tmp_path / "avgflows"
    assert main(["avg", str(gt / "flows"), str(gt2 / "flows"),
                 "--out", str(flow_out)]) == 0
    fa = fileio.read_flo(gt / "flows" / "flow_000000.flo")
    fb = fileio.read_flo(gt2 / "flows" / "flow_000000.flo")
    got = fileio.read_flo(flow_out / "flow_000000.flo")
    want = ((fa.uv + fb.uv) / 2).astype(np.float32).astype(np.float64)
    assert np.array_equal(got.uv, want)


def test_usage_error_exit_2(tmp_path):
    assert main(["synth"]) == 2  # missing --out
    assert main(["no-such-command"]) == 2
    assert main(["bootstrap", "--in", "x"]) == 2  # no output dir


def test_format_error_exit_3(tmp_path):
    gt = _synth(tmp_path)
    flo = next((gt / "flows").glob("*.flo"))
    flo.write_bytes(b"\x00" * 16)
    out = tmp_path / "out"
    assert main(["bootstrap", "--in", str(gt), "--out", str(out)]) == 3
    assert main(["eval", "--pred", str(tmp_path / "missing"),
                 "--gt", str(gt)]) == 3


def test_check_grads_command(tmp_path, capsys):
    assert main(["check-grads", "--scenes", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert main(["check-grads", "--scenes", "2", "--threshold", "1e-12"]) == 4


def test_print_config(capsys):
    assert main(["bootstrap", "--print-config"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pose"]["lam_bone"] == 1e4
    assert doc["flow"]["radius"] == 15
    assert [s["epochs"] for s in doc["schedule"]] == [8, 1500, 8]


def test_end_to_end_improves_both_metrics(tmp_path, capsys):
    # synth -> perturb -> bootstrap -> eval on the frozen benchmark scene
    gt = tmp_path / "gt"
    noisy = tmp_path / "noisy"
    refined = tmp_path / "refined"
    assert main(["synth", "--out", str(gt), "--seed", "77", "--frames", "10",
                 "--width", "128", "--height", "128"]) == 0
    assert main(["perturb", "--in", str(gt), "--out", str(noisy),
                 "--pose-sigma", "0.02", "--camera-sigma", "0.5", "1.0", "1.0",
                 "--det-sigma", "0.5", "--corrupt-rect", "45", "53", "32", "32",
                 "--corrupt-flow", "-2.5", "1.5", "--seed", "78"]) == 0

    def metrics(pred):
        capsys.readouterr()
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == 0
        lines = capsys.readouterr().out.splitlines()
        mpjpe_mm = float(lines[0].split()[-1])
        epe_joints = float([l for l in lines if "joints" in l][0].split()[-1])
        return mpjpe_mm, epe_joints

    m0, e0 = metrics(noisy)
    with pytest.warns(RuntimeWarning):
        assert main(["bootstrap", "--in", str(noisy), "--out", str(refined),
                     "--gt", str(gt)]) == 0
    m1, e1 = metrics(refined)
    assert m1 < m0 and e1 < e0


def test_cli_output_deterministic(tmp_path, capsys):
    gt = _synth(tmp_path, name="g1", seed=4)
    capsys.readouterr()
    assert main(["eval", "--pred", str(gt), "--gt", str(gt)]) == 0
    first = capsys.readouterr().out
    assert main(["eval", "--pred", str(gt), "--gt", str(gt)]) == 0
    second = capsys.readouterr().out
    assert first == second
