import json
from pathlib import Path

import pytest

from promptseg.cli import main


def _write_config(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    """A synthesized fixture shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli-fixture")
    cfg = _write_config(root / "synth.json", {
        "seed": 3,
        "synth": {"num_scenes": 2, "height": 16, "width": 16, "num_classes": 3,
                  "feature_dim": 8, "fpn_dim": 8, "noise_sigma": 0.02,
                  "min_boxes": 1, "max_boxes": 2, "min_size": 4, "max_size": 6},
    })
    out = root / "fixture"
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_config(fixture_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-config")
    doc = {
        "seed": 3,
        "steps": 8,
        "num_kernels": 4,
        "num_stages": 2,
        "min_area": 4,
        "bank": str(fixture_dir / "bank.json"),
        "scenes": [str(fixture_dir / "scene000.json"),
                   str(fixture_dir / "scene001.json")],
    }
    return _write_config(root / "run.json", doc)


def test_missing_config_file(tmp_path, capsys):
    code = main(["propose", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "config not found" in err and "nope.json" in err
    assert err.count("\n") == 1


def test_unknown_config_key_named(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", {"lamda_cls": 2})
    assert main(["propose", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert 'unknown config key "lamda_cls"' in capsys.readouterr().err


def test_unknown_nested_key_named(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json",
                        {"loss_weights": {"lambda_dyce": 4}})
    assert main(["propose", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "lambda_dyce" in capsys.readouterr().err


def test_synth_writes_manifests(fixture_dir):
    assert (fixture_dir / "bank.json").is_file()
    assert (fixture_dir / "scene000.json").is_file()
    echo = json.loads((fixture_dir / "resolved-config.json").read_text())
    assert echo["fixture_sha256"]
    assert echo["backend"] in ("numpy", "numba")


def test_propose_is_deterministic(run_config, tmp_path):
    out1, out2 = tmp_path / "p1", tmp_path / "p2"
    assert main(["propose", "--config", str(run_config), "--out", str(out1)]) == 0
    assert main(["propose", "--config", str(run_config), "--out", str(out2)]) == 0
    csv1 = (out1 / "proposals.csv").read_bytes()
    assert csv1 == (out2 / "proposals.csv").read_bytes()
    assert len(csv1.splitlines()) > 1  # found something
    echo = json.loads((out1 / "resolved-config.json").read_text())
    assert echo["resolved"]["tau"] == 0.5
    assert echo["head_variant"] == "simplified-v1"


def test_match_report(run_config, tmp_path):
    out = tmp_path / "m"
    assert main(["match", "--config", str(run_config), "--out", str(out)]) == 0
    lines = (out / "match-report.csv").read_text().splitlines()
    assert lines[0] == "scene,kernel,chosen_proposal,similarity,strategy"
    assert len(lines) > 1
    for row in lines[1:]:
        assert row.split(",")[4] == "cosine"


def test_pretrain_writes_artifacts(run_config, tmp_path):
    out = tmp_path / "t"
    assert main(["pretrain", "--config", str(run_config), "--out", str(out),
                 "--steps", "5"]) == 0
    log = (out / "train-log.csv").read_text().splitlines()
    assert len(log) == 1 + 5
    assert (out / "checkpoint.ckpt").is_file()
    manifest = json.loads((out / "run-manifest.json").read_text())
    assert manifest["config"]["steps"] == 5
    assert manifest["head_variant"] == "simplified-v1"
    assert manifest["fixture_sha256"]


def test_seed_override_changes_run(run_config, tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    main(["pretrain", "--config", str(run_config), "--out", str(out1),
          "--steps", "3", "--seed", "1"])
    main(["pretrain", "--config", str(run_config), "--out", str(out2),
          "--steps", "3", "--seed", "2"])
    assert (out1 / "train-log.csv").read_bytes() != (out2 / "train-log.csv").read_bytes()


def test_identical_runs_byte_identical(run_config, tmp_path):
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    for out in (out1, out2):
        assert main(["pretrain", "--config", str(run_config), "--out",
                     str(out), "--steps", "4"]) == 0
    assert (out1 / "train-log.csv").read_bytes() == (out2 / "train-log.csv").read_bytes()
    assert (out1 / "checkpoint.ckpt").read_bytes() == (out2 / "checkpoint.ckpt").read_bytes()
    m1 = json.loads((out1 / "run-manifest.json").read_text())
    m2 = json.loads((out2 / "run-manifest.json").read_text())
    assert m1["fixture_sha256"] == m2["fixture_sha256"]


def test_compare_two_strategies(run_config, tmp_path):
    out = tmp_path / "c"
    assert main(["compare", "--config", str(run_config), "--out", str(out),
                 "--steps", "6", "--strategies", "cosine,none"]) == 0
    curves = (out / "compare-curves.csv").read_text().splitlines()
    assert len(curves) == 1 + 6 * 2
    summary = (out / "compare-summary.csv").read_text().splitlines()
    assert len(summary) == 3
    assert summary[0] == "strategy,final_loss,steps_to_threshold,threshold"


def test_compare_rejects_unknown_strategy(run_config, tmp_path, capsys):
    assert main(["compare", "--config", str(run_config), "--out",
                 str(tmp_path / "x"), "--strategies", "cosine,best"]) == 1
    assert "best" in capsys.readouterr().err


def test_eval_ap_report(run_config, tmp_path):
    out = tmp_path / "e"
    assert main(["eval-ap", "--config", str(run_config), "--out", str(out)]) == 0
    text = (out / "eval-report.csv").read_text()
    lines = text.splitlines()
    assert lines[0].startswith("#") and "tau=0.5" in lines[0]
    assert lines[1] == "scene,iou_thr,ap"
    assert any(line.startswith("ALL,mAP,") for line in lines)


def test_atlas_outputs(run_config, tmp_path):
    train_out = tmp_path / "t"
    assert main(["pretrain", "--config", str(run_config), "--out",
                 str(train_out), "--steps", "3"]) == 0
    doc = json.loads(Path(run_config).read_text())
    doc["checkpoint"] = str(train_out / "checkpoint.ckpt")
    cfg2 = tmp_path / "atlas.json"
    cfg2.write_text(json.dumps(doc))
    out = tmp_path / "a"
    assert main(["atlas", "--config", str(cfg2), "--out", str(out)]) == 0
    pgms = sorted(out.glob("kernel*.pgm"))
    assert len(pgms) == 4
    report = json.loads((out / "diversity.json").read_text())
    assert 0.0 <= report["diversity"]["mean_pairwise_iou"] <= 1.0

    from promptseg.pgm import read_pgm
    img = read_pgm(pgms[0])
    assert img.shape == (200, 200)


def test_atlas_requires_checkpoint_key(run_config, tmp_path, capsys):
    assert main(["atlas", "--config", str(run_config), "--out",
                 str(tmp_path / "a2")]) == 1
    assert "checkpoint" in capsys.readouterr().err
