import numpy as np
import pytest

from mgrftex import features as ft
from mgrftex.cli import main
from mgrftex.config import ConfigError, RunConfig, parse_selectors
from mgrftex.imagecore import GreyImage, save_image
from mgrftex.mgrfmodel import NestedModel, Potential, serialize_model


def _texture_pgm(path, size=128, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size]
    wave = 128 + 100 * np.sin(2 * np.pi * x / 8) * np.cos(2 * np.pi * y / 8)
    px = np.clip(wave + rng.normal(0, 10, (size, size)), 0, 255).astype(np.uint8)
    save_image(GreyImage(px, 256), path)
    return path


def _train_config(tmp_path, **extra):
    img = _texture_pgm(tmp_path / "texture.pgm")
    out_dir = tmp_path / "run"
    lines = {
        "training_image": str(img),
        "out_dir": str(out_dir),
        "levels": 8,
        "selectors": "gld2:1",
        "feature_radius": 5,
        "csa_runs": 2,
        "csa_sweeps": 4,
        "csa_size": 40,
        "final_rounds": 0,
        "seed": 3,
    }
    lines.update(extra)
    cfg = tmp_path / "train.cfg"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return cfg, out_dir


def _tiny_model_file(tmp_path, q=8):
    kind = ft.marginal_kind(q)
    target = np.linspace(2, 1, q)
    target /= target.sum()
    model = NestedModel(q, (Potential(kind, ((0, 0),), np.zeros(q), target=target),))
    path = tmp_path / "model.txt"
    path.write_text(serialize_model(model))
    return path


# ---------------------------------------------------------------------------
# Configuration


def test_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("no_such_knob = 5\n")
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig.from_file(str(p))


def test_config_overrides_and_comments(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("levels = 8  # working grey levels\n\nseed = 4\n")
    cfg = RunConfig.from_file(str(p), overrides=["seed=9"])
    assert cfg.levels == 8 and cfg.seed == 9


def test_config_bad_value(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("levels = eight\n")
    with pytest.raises(ConfigError, match="bad value"):
        RunConfig.from_file(str(p))


def test_parse_selectors():
    specs = parse_selectors("gld2:8,jagstar9:4:2")
    assert specs[0].family == "gld2" and specs[0].iterations == 8 and specs[0].add_count == 3
    assert specs[1].family == "jagstar9" and specs[1].iterations == 4 and specs[1].add_count == 2
    with pytest.raises(ConfigError):
        parse_selectors("wavelet:8")


# ---------------------------------------------------------------------------
# train


def test_train_writes_outputs_and_is_deterministic(tmp_path):
    cfg, out_dir = _train_config(tmp_path)
    assert main(["train", "--config", str(cfg)]) == 0
    model_text = (out_dir / "model.txt").read_text()
    assert (out_dir / "train_log.csv").exists()
    assert (out_dir / "run_config.txt").exists()
    # 1 marginal + 2 base + 3 selected
    assert model_text.count("\npotential ") == 6

    assert main(["train", "--config", str(cfg)]) == 0
    assert (out_dir / "model.txt").read_text() == model_text


def test_train_missing_image(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("training_image = /nonexistent/tex.pgm\n")
    assert main(["train", "--config", str(cfg)]) == 2


def test_usage_error_exit_code():
    assert main(["train"]) == 1  # missing --config
    assert main(["frobnicate"]) == 1


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_image_and_is_seed_deterministic(tmp_path):
    model = _tiny_model_file(tmp_path)
    out1 = tmp_path / "a.pgm"
    out2 = tmp_path / "b.pgm"
    base = ["synth", "--model", str(model), "--width", "24", "--height", "20",
            "--sweeps", "3", "--seed", "5"]
    assert main(base + ["--out", str(out1)]) == 0
    assert main(base + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_synth_single_sweep(tmp_path):
    model = _tiny_model_file(tmp_path)
    out = tmp_path / "one.png"
    assert main(["synth", "--model", str(model), "--out", str(out),
                 "--width", "16", "--height", "16", "--sweeps", "1"]) == 0
    assert out.exists()


def test_synth_corrupt_model(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("garbage")
    assert main(["synth", "--model", str(bad), "--out", str(tmp_path / "x.pgm")]) == 2


# ---------------------------------------------------------------------------
# inpaint


def test_inpaint_emits_both_images_and_scores(tmp_path):
    model = _tiny_model_file(tmp_path)
    frame = tmp_path / "frame.pgm"
    rng = np.random.default_rng(0)
    save_image(GreyImage(rng.integers(0, 8, (76, 76), dtype=np.uint8), 8), frame)
    out_dir = tmp_path / "inp"
    assert main([
        "inpaint", "--model", str(model), "--frame", str(frame),
        "--out-dir", str(out_dir), "--sweeps", "6", "--smooth-window", "3",
        "--hole-width", "54", "--hole-height", "54",
    ]) == 0
    assert (out_dir / "inpaint_raw_0.png").exists()
    assert (out_dir / "inpaint_smoothed_0.png").exists()
    assert (out_dir / "inpaint_scores.csv").read_text().startswith("rep,")


def test_inpaint_hole_larger_than_frame(tmp_path):
    model = _tiny_model_file(tmp_path)
    frame = tmp_path / "frame.pgm"
    save_image(GreyImage(np.zeros((76, 76), dtype=np.uint8), 8), frame)
    assert main([
        "inpaint", "--model", str(model), "--frame", str(frame),
        "--out-dir", str(tmp_path / "o"), "--hole-width", "80", "--hole-height", "80",
    ]) == 2


# ---------------------------------------------------------------------------
# bench and inspect


def test_bench_with_prebuilt_model(tmp_path):
    model = _tiny_model_file(tmp_path, q=16)
    tex = _texture_pgm(tmp_path / "big.pgm", size=220, seed=2)
    out_dir = tmp_path / "bench"
    code = main([
        "bench", "--texture", "D77", "--image", str(tex),
        "--model", str(model), "--out-dir", str(out_dir),
        "--set", "bench_reps=2", "--set", "inpaint_sweeps=8",
        "--set", "smooth_window=4",
    ])
    assert code == 0
    assert (out_dir / "bench_D77.csv").exists()
    assert (out_dir / "run_config.txt").exists()


def test_inspect_prints_offset_maps(tmp_path, capsys):
    kind = ft.gld_kind(8)
    model = NestedModel(8, (Potential(kind, ((0, 0), (2, 1)), np.zeros(kind.bins)),))
    path = tmp_path / "m.txt"
    path.write_text(serialize_model(model))
    assert main(["inspect", "--model", str(path)]) == 0
    out = capsys.readouterr().out
    assert "1 potentials" in out
    assert "o.." in out and "..#" in out
