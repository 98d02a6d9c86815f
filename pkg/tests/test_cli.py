import numpy as np
import pytest

from eulerflow.cli import main
from eulerflow.grid import MotionField
from eulerflow.io import read_csv, read_flo, read_pnm, write_flo


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_synth_estimate_mask_loss_pipeline(tmp_path, capsys):
    s, e = tmp_path / "scene", tmp_path / "est"
    code, _, err = run(capsys, "synth", "--scene", "translating_rectangle", "-T", 3, "--out", s)
    assert code == 0 and "wrote 3 frames" in err
    assert (s / "frame_0002.pgm").exists() and (s / "fwd_0001.flo").exists()

    assert run(capsys, "estimate", s, "--out", e, "--bidirectional", "--color")[0] == 0
    assert (e / "bwd_0001.flo").exists() and (e / "fwd_0000.ppm").exists()

    code, out, _ = run(capsys, "mask", s / "fwd_0000.flo", s / "bwd_0000.flo",
                       "--out", tmp_path / "m.pgm", "--energy", tmp_path / "e.pgm")
    assert code == 0 and 0.9 < float(out) < 1.0

    code, out, _ = run(capsys, "loss", s / "frame_0001.pgm", s / "frame_0000.pgm",
                       s / "fwd_0000.flo", "--mask", s / "occ_0000.pgm", "--out", tmp_path / "l.csv")
    assert code == 0 and float(out) < 0.01
    assert read_csv(tmp_path / "l.csv")[1] == ["loss", "valid_count"]


def test_mask_on_exact_inverse_flows_is_white(tmp_path, capsys):
    write_flo(tmp_path / "f.flo", MotionField.uniform(6, 5, 0.0, 1.0))
    write_flo(tmp_path / "b.flo", MotionField.uniform(6, 5, 0.0, -1.0))
    code, _, _ = run(capsys, "mask", tmp_path / "f.flo", tmp_path / "b.flo", "--out", tmp_path / "m.pgm")
    assert code == 0
    bits = read_pnm(tmp_path / "m.pgm").data[:4, :, 0]
    assert np.all(bits == 1.0)


def test_estimate_worker_counts_give_identical_files(tmp_path, capsys):
    s = tmp_path / "scene"
    run(capsys, "synth", "--scene", "crossing_sprites", "-T", 4, "--out", s)
    for w in (1, 2):
        assert run(capsys, "estimate", s, "--out", tmp_path / f"w{w}", "--workers", w)[0] == 0
    for k in range(3):
        name = f"fwd_{k:04d}.flo"
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_theorem_csvs(tmp_path, capsys):
    p1, p2 = tmp_path / "t1.csv", tmp_path / "t2.csv"
    assert run(capsys, "theorem1", "-T", 32, "--trials", 200, "--out", p1)[0] == 0
    code, _, err = run(capsys, "theorem2", "--sigma", 1, "--trials", 1000, "--out", p2)
    assert code == 0 and "bound holds" in err
    _, header, rows = read_csv(p2)
    col = header.index("mean_epe")
    assert max(float(r[col]) for r in rows) <= 1 + 3 / np.sqrt(1000)


def test_csv_reproducible_and_seeded(tmp_path, capsys, monkeypatch):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    run(capsys, "theorem2", "-T", 8, "--trials", 100, "--out", a)
    run(capsys, "theorem2", "-T", 8, "--trials", 100, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("EULERFLOW_SEED", "4")
    run(capsys, "theorem2", "-T", 8, "--trials", 100, "--out", c)
    assert read_csv(c)[0].endswith("seed=4") and a.read_bytes() != c.read_bytes()


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[bgc]\nalpha2 = 1000\n[run]\nseed = 9\n", encoding="utf-8")
    write_flo(tmp_path / "f.flo", MotionField.uniform(4, 4, 1.0, 0.0))
    write_flo(tmp_path / "b.flo", MotionField.zeros(4, 4))
    args = ["mask", tmp_path / "f.flo", tmp_path / "b.flo", "--out", tmp_path / "m.pgm",
            "--config", cfg]
    assert float(run(capsys, *args)[1]) == 0.75
    assert float(run(capsys, *args, "--alpha2", 0.5)[1]) == 0.0


def test_drift_sweep_ewarp(tmp_path, capsys):
    d = tmp_path / "drift"
    code, out, _ = run(capsys, "drift", "--scene", "translating_rectangle", "-T", 10, "--seeds", 2,
                       "--sigma", 0.05, "--law", "linear_in_t", "--out", d)
    assert code == 0 and out.strip() in ("0.0", "0.5", "1.0")
    assert (d / "drift.csv").exists() and (d / "final_eulerian_step.pgm").exists()

    sw = tmp_path / "sweep.csv"
    assert run(capsys, "sweep", "--scene", "static", "-T", 3, "--flows", "analytic", "--out", sw)[0] == 0
    assert len(read_csv(sw)[2]) == 9

    s = tmp_path / "scene"
    run(capsys, "synth", "--scene", "static", "-T", 3, "--out", s)
    code, out, _ = run(capsys, "ewarp", s)
    assert code == 0 and float(out) == 0.0


def test_failures_exit_nonzero_and_clean_up(tmp_path, capsys):
    code, _, err = run(capsys, "estimate", tmp_path / "missing", "--out", tmp_path / "o")
    assert code == 1 and "missing" in err
    (tmp_path / "bad.flo").write_bytes(b"\x00" * 20)
    write_flo(tmp_path / "b.flo", MotionField.zeros(1, 1))
    code, _, err = run(capsys, "mask", tmp_path / "bad.flo", tmp_path / "b.flo",
                       "--out", tmp_path / "m.pgm")
    assert code == 1 and "sentinel" in err and not (tmp_path / "m.pgm").exists()
    # the scene fails validation after the output directory is created
    (tmp_path / "scene.txt").write_text("[scene]\nwidth = 8\nheight = 8\nchannels = 2\n")
    code, _, _ = run(capsys, "synth", "--scene-file", tmp_path / "scene.txt", "-T", 2,
                     "--out", tmp_path / "new" / "dir")
    assert code == 1 and not (tmp_path / "new").exists()
    with pytest.raises(SystemExit) as exc:
        main(["mask", "--bogus"])
    assert exc.value.code != 0
