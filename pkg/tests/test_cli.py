import csv

import pytest

from srdefense import imaging
from srdefense.cli import build_parser, main
from srdefense.records import load_record

COMMANDS = {"train", "train-sr", "attack", "defend", "evaluate", "sweep", "spectrum", "cam", "probe", "advtrain", "transfer", "show-config"}


@pytest.fixture(scope="module")
def run_cfg(tmp_path_factory, trained_clf, trained_sr):
    root = tmp_path_factory.mktemp("cli")
    trained_clf.save(root / "clf.ckpt")
    trained_sr.save(root / "sr.ckpt")
    cfg = root / "run.cfg"
    cfg.write_text(
        f"""
        dataset.name = synthetic
        dataset.subset = 12
        model.checkpoint = {root / 'clf.ckpt'}
        sr.checkpoint = {root / 'sr.ckpt'}
        attacks = none, fgsm
        defense.columns = none, wd_sr
        sweep.scales = 2
        sweep.sigmas = 0.03, 0.05
        probe.pairs = 30
        probe.epochs = 2
        probe.attacks = fgsm
        cam.count = 4
        spectrum.count = 2
        transfer.archs = smallcnn, copy
        transfer.checkpoints = {root / 'clf.ckpt'}, {root / 'clf.ckpt'}
        out = {root / 'out'}
        """
    )
    return root, cfg


def test_parser_has_every_subcommand():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == COMMANDS


def test_show_config(capsys, run_cfg):
    assert main(["show-config", "--config", str(run_cfg[1])]) == 0
    assert "dataset.subset = 12" in capsys.readouterr().out


def test_evaluate_writes_record_and_csv(capsys, run_cfg):
    root, cfg = run_cfg
    assert main(["evaluate", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    path = out.strip().splitlines()[-1].split("record: ")[1]
    record = load_record(path)
    table = record.tables["graybox"]
    assert table.rows == ["none", "fgsm"] and table.columns == ["none", "wd_sr"]
    assert table.get("none", "none") == 1.0


def test_attack_then_defend(run_cfg):
    root, cfg = run_cfg
    dest = root / "adv"
    assert main(["attack", "--config", str(cfg), "--attack", "fgsm", "--count", "3", "--dest", str(dest)]) == 0
    rows = list(csv.DictReader(open(dest / "manifest.csv")))
    assert len(rows) == 3 and all(float(r["linf"]) <= 8 / 255 + 1e-12 for r in rows)
    out = root / "defended"
    assert main(["defend", "--config", str(cfg), "--input", str(dest), "--output", str(out), "--stage", "wd_sr"]) == 0
    assert imaging.read_png(out / "00000.png").shape == (64, 64, 3)
    wd = root / "denoised"
    assert main(["defend", "--config", str(cfg), "--input", str(dest), "--output", str(wd), "--stage", "wd"]) == 0
    assert imaging.read_png(wd / "00000.png").shape == (32, 32, 3)


def test_defend_empty_directory_is_an_error(capsys, run_cfg, tmp_path):
    assert main(["defend", "--config", str(run_cfg[1]), "--input", str(tmp_path), "--output", str(tmp_path / "o")]) == 2
    assert "no PNG files" in capsys.readouterr().err


def test_bad_config_returns_two(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("defense.scale = 7\n")
    assert main(["evaluate", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["sweep", "spectrum", "cam", "probe", "transfer"])
def test_analysis_subcommands_run(command, capsys, run_cfg):
    root, cfg = run_cfg
    assert main([command, "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    if command == "sweep":
        assert "recommended" in out
    if command == "spectrum":
        assert len(list((root / "out" / "spectrum").glob("*.png"))) == 16
    if command == "transfer":
        record = load_record(out.strip().splitlines()[-1].split("record: ")[1])
        assert record.tables["transfer"].get("smallcnn", "smallcnn") is None


def test_cached_checkpoints_are_reused(capsys, run_cfg):
    root, cfg = run_cfg
    assert main(["train", "--config", str(cfg)]) == 0
    assert str(root / "clf.ckpt") in capsys.readouterr().out
