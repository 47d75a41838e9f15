import filecmp
import json

import numpy as np
import pytest

from streetsplat import gradcheck
from streetsplat.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, default_config, main
from streetsplat.scene_io import read_depth, read_image
from tests.conftest import TINY_MODEL

SMALL_SCENE = ["--scene.resolution", "32x48", "--scene.supersample", "1"]
TINY_FLAGS = [x for k, v in TINY_MODEL.items() for x in (f"--model.{k}", str(v))]


def gen(out, *extra):
    return main(["gen-data", "--out", str(out), *SMALL_SCENE, *extra])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert gen(root / "data", "--frames", "3", "--scenes", "1") == EXIT_OK
    ckpt = root / "m.adgc"
    code = main(["train", "--out", str(ckpt), "--scenes", str(root / "data"), "--train.total_steps", "4",
                 *TINY_FLAGS])
    assert code == EXIT_OK
    return root, ckpt


def test_gen_data_writes_one_triple_per_frame(tmp_path):
    assert gen(tmp_path / "d", "--scenes", "1", "--frames", "2") == EXIT_OK
    (scene,) = [p for p in (tmp_path / "d").iterdir() if p.is_dir()]
    frames = scene / "frames"
    for kind in ("image.png", "depth.adgd", "camera.json"):
        assert sorted(p.name for p in frames.glob(f"*.{kind}")) == [f"0000.{kind}", f"0001.{kind}"]


def test_gen_data_rerun_is_byte_identical(tmp_path):
    gen(tmp_path / "a", "--seed", "4", "--frames", "2")
    gen(tmp_path / "b", "--seed", "4", "--frames", "2")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    for rel in files_a:
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False), rel


def test_gen_data_full_density_matches_dense(tmp_path):
    gen(tmp_path / "d", "--frames", "2", "--density", "1.0")
    for sparse in (tmp_path / "d").rglob("*.depth.adgd"):
        dense = sparse.with_name(sparse.name.replace(".depth.", ".dense_depth."))
        assert np.array_equal(read_depth(sparse), read_depth(dense))


def test_gen_data_refuses_nonempty_without_force(tmp_path):
    gen(tmp_path / "d", "--frames", "2")
    assert gen(tmp_path / "d", "--frames", "2") == EXIT_USAGE
    assert gen(tmp_path / "d", "--frames", "2", "--force") == EXIT_OK


def test_help_lists_every_config_key(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for section, values in default_config().items():
        for key, value in values.items():
            assert f"{section}.{key} = {json.dumps(value)}" in text


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--out", str(tmp_path / "m"), "--train.learning_rate", "1"])
    assert info.value.code == EXIT_USAGE


def test_unknown_config_file_key_names_it(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"learning_rate": 1.0}}))
    assert main(["train", "--out", str(tmp_path / "m"), "--config", str(cfg)]) == EXIT_USAGE
    assert "train.learning_rate" in capsys.readouterr().err


def test_invalid_value_is_usage_error(tmp_path):
    assert main(["train", "--out", str(tmp_path / "m"), "--train.total_steps", "0"]) == EXIT_USAGE


def test_missing_scene_dir_is_path_error(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "m"), "--scenes", str(tmp_path / "nope")]) == EXIT_USAGE
    assert "nope" in capsys.readouterr().err


def test_train_log_has_one_line_per_step(trained):
    _, ckpt = trained
    lines = open(f"{ckpt}.log.jsonl").read().splitlines()
    assert len(lines) == 4 and [json.loads(x)["step"] for x in lines] == [0, 1, 2, 3]


def test_render_shift_zero_equals_eval_export(trained, tmp_path):
    root, ckpt = trained
    assert main(["eval", "--ckpt", str(ckpt), "--scenes", str(root / "data"), "--protocol", "view_shift:0",
                 "--export", str(tmp_path / "ev"), "--out", str(tmp_path / "m.csv")]) == EXIT_OK
    (scene,) = [p for p in (root / "data").iterdir() if p.is_dir()]
    assert main(["render", "--ckpt", str(ckpt), "--scene", str(scene), "--frame", "1", "--shift-x", "0",
                 "--out", str(tmp_path / "r")]) == EXIT_OK
    stem = tmp_path / "r" / f"{scene.name}.0001.shift+0"
    ev = tmp_path / "ev" / scene.name / "0001.view_shift"
    assert filecmp.cmp(f"{stem}.png", f"{ev}.png", shallow=False)
    assert filecmp.cmp(f"{stem}.adgd", f"{ev}.adgd", shallow=False)


def test_render_shifted_views_differ(trained, tmp_path):
    root, ckpt = trained
    (scene,) = [p for p in (root / "data").iterdir() if p.is_dir()]
    imgs = []
    for dx in ("-0.5", "0.5"):
        assert main(["render", "--ckpt", str(ckpt), "--scene", str(scene), "--frame", "0", "--shift-x", dx,
                     "--out", str(tmp_path)]) == EXIT_OK
        imgs.append(read_image(tmp_path / f"{scene.name}.0000.shift{float(dx):+g}.png"))
    assert not np.array_equal(*imgs)


def test_render_missing_frame_is_range_error(trained, tmp_path, capsys):
    root, ckpt = trained
    (scene,) = [p for p in (root / "data").iterdir() if p.is_dir()]
    assert main(["render", "--ckpt", str(ckpt), "--scene", str(scene), "--frame", "7",
                 "--out", str(tmp_path)]) == EXIT_USAGE
    assert "out of range" in capsys.readouterr().err


def test_eval_prints_csv(trained, capsys):
    root, ckpt = trained
    assert main(["eval", "--ckpt", str(ckpt), "--scenes", str(root / "data")]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "scene,protocol,psnr,ssim,lpips" and lines[-1].startswith("mean,next_frame,")


def test_eval_bad_protocol(trained):
    root, ckpt = trained
    assert main(["eval", "--ckpt", str(ckpt), "--scenes", str(root / "data"), "--protocol", "x"]) == EXIT_USAGE


def test_ablate_writes_table(trained, tmp_path):
    root, _ = trained
    assert main(["ablate", "--variants", "full,no_dpe", "--scenes", str(root / "data"), "--out", str(tmp_path),
                 "--train.total_steps", "2", *TINY_FLAGS]) == EXIT_OK
    rows = (tmp_path / "ablation.csv").read_text().splitlines()
    assert rows[1].startswith("full/") and any(r.startswith("no_dpe/mean") for r in rows)


def test_grad_check_requires_64_bit(monkeypatch):
    monkeypatch.setenv("ADG_PRECISION", "32")
    assert main(["grad-check"]) == EXIT_USAGE


def test_grad_check_fails_on_corrupted_backward(monkeypatch, capsys):
    import streetsplat.render.rasterizer as rz

    real = rz._backward

    def corrupted(*args, **kwargs):
        grads = real(*args, **kwargs)
        grads["scales"] = grads["scales"] * 1.5
        return grads

    monkeypatch.setenv("ADG_PRECISION", "64")
    monkeypatch.setattr(rz, "_backward", corrupted)
    monkeypatch.setattr(gradcheck, "check_pipeline", lambda seed, size: {})
    assert main(["grad-check", "--size", "8x8"]) == EXIT_RUNTIME
