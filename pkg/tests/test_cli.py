import json

import numpy as np
import pytest

from padalign.cli import DEFAULTS, main, parse_config, resolve_config, UsageError
from padalign.tensorio import TensorRecord, write_bundle

FAST = [
    "--set", "epochs=1", "--set", "data_count=24", "--set", "enc_layers=1",
    "--set", "enc_dim=8", "--set", "enc_ffn=16", "--set", "data_vocab=8",
    "--set", "data_frame_dim=8", "--set", "data_text_len_min=2",
    "--set", "data_text_len_max=4", "--set", "batch_size=8",
]


def test_train_writes_metrics_and_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--variant", "pad_tlocal", "--seed", "7",
                 "--out", str(out)] + FAST)
    assert code == 0
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert lines[0].startswith("epoch,")
    assert len(lines) >= 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["config"]["variant"] == "pad_tlocal"
    # fully resolved: every known key is present
    assert set(manifest["config"]) == set(DEFAULTS)


def test_unknown_variant_lists_canonical_names(tmp_path, capsys):
    code = main(["train", "--variant", "bogus", "--out", str(tmp_path / "x")])
    captured = capsys.readouterr()
    assert code == 1
    for name in ("glob_cls", "glob_avr", "pad_glob", "tlocal", "tlocal_idf",
                 "pad_tlocal", "pad_slocal", "tlocal_or", "slocal_or"):
        assert name in captured.err


def test_malformed_config_is_line_anchored(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("seed = 3\nepochs\n")
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")])
    captured = capsys.readouterr()
    assert code == 1
    assert "bad.cfg:2" in captured.err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 3\nepochs = 5  # comment\n")
    resolved = resolve_config(str(cfg), {"epochs": "2"})
    assert resolved["seed"] == "3"
    assert resolved["epochs"] == "2"  # flags win
    assert resolved["variant"] == DEFAULTS["variant"]
    with pytest.raises(UsageError):
        parse_config(str(tmp_path / "missing.cfg"))
    with pytest.raises(UsageError):
        resolve_config(None, {"nonsense": "1"})


def test_inspect_aasa_uniform_bundle(tmp_path, capsys):
    # uniform attention -> uniform prior -> anchors 0,3,6,9 for n=12, xi=4
    n = 12
    attn = np.full((1, n, n), 1.0 / n, dtype=np.float32)
    hidden = np.random.default_rng(0).normal(size=(n, 4)).astype(np.float32)
    bundle = tmp_path / "bundle"
    write_bundle([TensorRecord("attn", attn, "attention"),
                  TensorRecord("hidden", hidden, "hidden")], bundle)
    code = main(["inspect", "aasa", "--bundle", str(bundle), "--xi", "4",
                 "--scales", "2"])
    captured = capsys.readouterr()
    assert code == 0
    lines = captured.out.strip().splitlines()
    assert lines[0] == "anchor,half_width"
    anchors = sorted({int(line.split(",")[0]) for line in lines[1:]})
    assert anchors == [0, 3, 6, 9]


def test_inspect_asp_prints_distribution(tmp_path, capsys):
    rng = np.random.default_rng(1)
    raw = rng.random((2, 5, 5)) + 1e-3
    attn = (raw / raw.sum(axis=-1, keepdims=True)).astype(np.float32)
    bundle = tmp_path / "bundle"
    write_bundle([TensorRecord("attn", attn, "attention")], bundle)
    code = main(["inspect", "asp", "--bundle", str(bundle)])
    captured = capsys.readouterr()
    assert code == 0
    lines = captured.out.strip().splitlines()
    assert lines[0] == "position,weight"
    weights = [float(line.split(",")[1]) for line in lines[1:]]
    assert len(weights) == 5
    assert abs(sum(weights) - 1.0) < 1e-5


def test_gen_data_writes_bundle(tmp_path, capsys):
    out = tmp_path / "ds"
    code = main(["gen-data", "--out", str(out), "--set", "data_count=5",
                 "--set", "data_vocab=6", "--set", "data_frame_dim=4"])
    assert code == 0
    from padalign.tensorio import dataset_from_bundle
    ds = dataset_from_bundle(out)
    assert len(ds) == 5


def test_ablate_runs_grid(tmp_path, capsys):
    out = tmp_path / "grid"
    code = main(["ablate", "--out", str(out)] + FAST
                + ["--set", "span_xi=4", "--set", "span_scales=2"])
    assert code == 0
    cells = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert "pad_glob_full" in cells
    assert "pad_slocal_wo_anch_pts" in cells
    assert "joint_all" in cells
    assert len(cells) == 14
    for cell in cells:
        assert (out / cell / "metrics.csv").is_file()
        assert (out / cell / "manifest.json").is_file()


def test_missing_bundle_is_runtime_error(tmp_path, capsys):
    code = main(["inspect", "asp", "--bundle", str(tmp_path / "nope")])
    assert code == 2


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1


def test_manifest_reproduces_run_bit_for_bit(tmp_path, capsys):
    args = ["train", "--variant", "pad_tlocal", "--seed", "3"] + FAST
    code_a = main(args + ["--out", str(tmp_path / "a")])
    code_b = main(args + ["--out", str(tmp_path / "b")])
    assert code_a == 0 and code_b == 0
    metrics_a = (tmp_path / "a" / "metrics.csv").read_bytes()
    metrics_b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert metrics_a == metrics_b
    cfg_a = json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]
    cfg_b = json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]
    assert cfg_a == cfg_b


def test_out_dir_env_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PAD_OUT_DIR", str(tmp_path / "envroot"))
    code = main(["train", "--variant", "tlocal"] + FAST)
    assert code == 0
    runs = list((tmp_path / "envroot").iterdir())
    assert len(runs) == 1
    assert (runs[0] / "metrics.csv").is_file()
