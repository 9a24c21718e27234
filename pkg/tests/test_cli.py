import json
import os
from pathlib import Path

import pytest

from srdetbench.cli import EVAL_SR_COLUMNS, build_parser, main
from srdetbench.core import ImageBuffer
from srdetbench.imaging import save_image
from srdetbench.pipeline import TABLE_COLUMNS

GOLDEN = Path(__file__).parent / "golden"
SUBCOMMANDS = ["degrade", "train-sr", "infer-sr", "eval-sr", "detect", "eval-det", "run", "compare", "validate"]


def _help_text(capsys, args):
    with pytest.raises(SystemExit) as info:
        main(args + ["--help"])
    assert info.value.code == 0
    return capsys.readouterr().out


@pytest.fixture(autouse=True)
def fixed_width(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")


@pytest.mark.parametrize("sub", [None] + SUBCOMMANDS)
def test_help_matches_golden(capsys, sub):
    text = _help_text(capsys, [sub] if sub else [])
    path = GOLDEN / f"help_{sub or 'main'}.txt"
    if os.environ.get("SRDETBENCH_UPDATE_GOLDEN"):
        path.write_text(text)
    assert text == path.read_text()


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    sub_action = next(a for a in parser._actions if a.dest == "command")
    for name, sub in sub_action.choices.items():
        text = _help_text(capsys, [name])
        for action in sub._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)


def test_exit_codes(capsys, tmp_path):
    assert main([]) == 2
    assert main(["nope"]) == 2
    assert main(["degrade", str(tmp_path), "--out", str(tmp_path / "o")]) == 2  # --factor missing
    assert main(["degrade", str(tmp_path / "missing"), "--factor", "2", "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "MissingFile" in err and "imaging" in err


def _write_dir(path, images):
    path.mkdir()
    for name, img in images.items():
        save_image(img, path / f"{name}.png")
    return path


def test_degrade_and_eval_sr_identity(capsys, tmp_path):
    src = _write_dir(tmp_path / "hr", {"a": ImageBuffer.filled(33, 20, 100), "b": ImageBuffer.filled(16, 16, 7)})
    assert main(["degrade", str(src), "--factor", "2", "--out", str(tmp_path / "lr")]) == 0
    assert sorted(p.name for p in (tmp_path / "lr").iterdir()) == ["a.png", "b.png"]
    capsys.readouterr()
    assert main(["eval-sr", str(src), str(src), "--train-dataset", "toy"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(EVAL_SR_COLUMNS)
    assert lines[1] == "toy,RLFN,inf,0.0000"


def test_eval_sr_json(capsys, tmp_path):
    a = _write_dir(tmp_path / "a", {"x": ImageBuffer.filled(8, 8, 0)})
    b = _write_dir(tmp_path / "b", {"x": ImageBuffer.filled(8, 8, 16)})
    assert main(["eval-sr", str(a), str(b), "--json", "--sr", "bicubic"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["mse"] == 256.0 and doc["sr"] == "bicubic"
    c = _write_dir(tmp_path / "c", {"y": ImageBuffer.filled(8, 8, 16)})
    assert main(["eval-sr", str(a), str(c)]) == 3


def test_train_infer_round_trip(capsys, tmp_path):
    out = tmp_path / "ckpt"
    args = ["train-sr", "--synthetic", "3", "--tiny", "--steps", "4", "--batch-size", "2", "--patch-size", "8"]
    assert main(args + ["--out", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    ckpt = Path(summary["checkpoint"])
    assert ckpt.is_file() and (out / "history.json").is_file()
    lr = _write_dir(tmp_path / "lr", {"f": ImageBuffer.filled(12, 10, 50)})
    assert main(["infer-sr", str(lr), "--checkpoint", str(ckpt), "--out", str(tmp_path / "sr")]) == 0
    from srdetbench.imaging import load_image

    assert load_image(tmp_path / "sr" / "f.png").shape == (24, 20)


def test_train_config_file_supplies_defaults(capsys, tmp_path):
    conf = tmp_path / "train.toml"
    conf.write_text("[train-sr]\nsynthetic = 2\ntiny = true\nsteps = 3\nbatch_size = 1\npatch_size = 8\n")
    assert main(["train-sr", "--config", str(conf), "--out", str(tmp_path / "o"), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["steps"] == 3
    conf.write_text("[train-sr]\ncolour = 1\n")
    assert main(["train-sr", "--config", str(conf), "--out", str(tmp_path / "o")]) == 2


def test_detect_eval_det_and_validate(capsys, toy_manifest, tmp_path):
    dets = tmp_path / "d.jsonl"
    assert main(["detect", str(toy_manifest), "--out", str(dets), "--workers", "2"]) == 0
    assert main(["eval-det", str(dets), str(toy_manifest)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].startswith("100.0000,100.0000")
    assert main(["validate", str(toy_manifest)]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text('split = "test"\n[[sequences]]\nid = "X"\nframes = "nowhere"\ngt = "gt.txt"\n'
                   'roles = "r.txt"\nnative_shape = [4, 4]\nframe_count = 1\n')
    assert main(["validate", str(bad)]) == 3
    assert main(["validate", str(tmp_path / "absent.toml")]) == 3


def _run_config(tmp_path, manifest, name="c.toml"):
    p = tmp_path / name
    p.write_text(
        f'dataset = "{manifest}"\ndegrade_factor = 2\nrestoration = "bicubic"\n'
        'detector = { kind = "oracle", params = { center_jitter_std = 0.05, drop_prob = 0.1 } }\n'
    )
    return p


def test_run_is_deterministic(capsys, toy_manifest, tmp_path):
    c = _run_config(tmp_path, toy_manifest)
    assert main(["run", "--config", str(c), "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(c), "--seed", "7", "--out", str(tmp_path / "b"), "--workers", "4"]) == 0
    first = (tmp_path / "a" / "table.csv").read_bytes()
    assert first == (tmp_path / "b" / "table.csv").read_bytes()
    assert first.decode().splitlines()[0] == ",".join(TABLE_COLUMNS)
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 0
    assert "+0.0%" in capsys.readouterr().out


def test_run_errors(capsys, toy_manifest, tmp_path):
    assert main(["run"]) == 2
    p = tmp_path / "bad.toml"
    p.write_text(f'dataset = "{toy_manifest}"\ndegrade_factor = 5\n')
    assert main(["run", str(p)]) == 2
    p.write_text(f'dataset = "{tmp_path / "none.toml"}"\n')
    assert main(["run", str(p)]) == 3
    assert "ManifestUnreadable" in capsys.readouterr().err
