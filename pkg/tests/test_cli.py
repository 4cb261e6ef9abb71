import hashlib
import json
import os

import numpy as np
import pytest

from fiba import cli, pngio
from fiba.data import load_dataset


def _digest(path):
    h = hashlib.sha256()
    for root, dirs, files in sorted(os.walk(path)):
        dirs.sort()
        for f in sorted(files):
            p = os.path.join(root, f)
            h.update(os.path.relpath(p, path).encode())
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen", "--out", str(d / "clean"), "--per-class", "40", "--size", "16"]) == 0
    return d


def test_gen_layout_and_determinism(work, tmp_path):
    ds, trig = load_dataset(work / "clean")
    assert len(ds) == 160 and ds.n_train == 128 and trig is None
    assert cli.main(["gen", "--out", str(tmp_path / "again"), "--per-class", "40", "--size", "16"]) == 0
    assert _digest(work / "clean") == _digest(tmp_path / "again")


def test_gen_usage_errors(tmp_path, capsys):
    assert cli.main(["gen", "--out", str(tmp_path / "x"), "--classes", "1"]) == 2
    assert "usage error" in capsys.readouterr().err
    assert cli.main(["gen"]) == 2
    assert cli.main(["gen", "--out", str(tmp_path / "x"), "--task", "detection"]) == 2


def test_gen_segmentation(tmp_path):
    assert cli.main(["gen", "--task", "segmentation", "--n-images", "50", "--out", str(tmp_path / "s")]) == 0
    ds, _ = load_dataset(tmp_path / "s")
    assert ds.task == "segmentation" and ds.labels.shape == (50, 32, 32)


def test_poison_alpha_zero_is_identity(work):
    out = work / "alpha0"
    assert cli.main(["poison", "--data", str(work / "clean"), "--out", str(out), "--alpha", "0"]) == 0
    clean, _ = load_dataset(work / "clean")
    pois, trig = load_dataset(out)
    assert np.array_equal(clean.images, pois.images)
    assert (pois.provenance == "poisoned").sum() == 12
    assert trig is not None and len(os.listdir(out / "vis")) == 4


def test_poison_patch_residual_is_corner_block(work):
    out = work / "patch"
    assert cli.main(["poison", "--data", str(work / "clean"), "--out", str(out), "--attack", "patch",
                     "--samples", "2"]) == 0
    panel = pngio.read_image(sorted((out / "vis").iterdir())[0])
    resid = panel[:, 2 * (16 + 2):2 * (16 + 2) + 16]
    nz = np.argwhere(resid.max(axis=2) > 0)
    assert nz[:, 0].min() >= 10 and nz[:, 1].min() >= 10
    report = json.loads((out / "poison_report.json").read_text())
    assert report["config"]["attack"] == "patch" and report["n_poisoned"] == 12


def test_poison_errors(work, tmp_path):
    assert cli.main(["poison", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["poison", "--data", str(work / "clean"), "--out", str(tmp_path / "o"),
                     "--trigger", "no-such-trigger"]) == 2
    assert cli.main(["poison", "--data", str(work / "clean"), "--out", str(tmp_path / "o"),
                     "--target", "9"]) == 2


def test_train_eval_defend(work):
    pdir = work / "fiba"
    assert cli.main(["poison", "--data", str(work / "clean"), "--out", str(pdir)]) == 0
    tdir = work / "train"
    assert cli.main(["train", "--data", str(pdir), "--out", str(tdir), "--ptr", "--epochs", "2"]) == 0
    report = json.loads((tdir / "report.json").read_text())
    assert report["config"]["ptr"] is True and report["train"]["rho_n"] == 0.1
    assert {"ba", "asr", "p_asr"} <= set(report["metrics"])
    assert (tdir / "metrics.tsv").read_text().startswith("epoch\tloss\tba\tasr\tp_asr\n")
    edir = work / "eval"
    assert cli.main(["eval", "--data", str(pdir), "--model", str(tdir / "model.ckpt"), "--out", str(edir)]) == 0
    ev = json.loads((edir / "report.json").read_text())
    assert ev["metrics"]["ba"] == report["metrics"]["ba"]
    assert ev["metrics"]["p_asr"] == report["metrics"]["p_asr"]
    sdir = work / "strip"
    assert cli.main(["defend", "--data", str(pdir), "--model", str(tdir / "model.ckpt"), "--out", str(sdir),
                     "--n-inputs", "20", "--n-overlays", "8"]) == 0
    assert (sdir / "strip_hist.png").exists() and (sdir / "strip.tsv").exists()
    assert 0 <= json.loads((sdir / "report.json").read_text())["defense"]["overlap"] <= 1
    prdir = work / "prune"
    assert cli.main(["defend", "--method", "prune", "--data", str(pdir), "--model", str(tdir / "model.ckpt"),
                     "--out", str(prdir), "--fractions", "0,0.5,0.9"]) == 0
    assert len((prdir / "prune.tsv").read_text().splitlines()) == 4
    assert cli.main(["defend", "--method", "cleanse", "--data", str(pdir), "--model",
                     str(tdir / "model.ckpt"), "--out", str(prdir)]) == 2


def test_train_is_reproducible(work, tmp_path):
    args = ["train", "--data", str(work / "clean"), "--epochs", "2"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    for f in ("metrics.tsv", "model.ckpt", "curves.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_config_file_and_overrides(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# training run\ndata = {work / 'clean'}\nepochs = 1\nlr = 0.01\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--lr", "0.02"]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["config"]["epochs"] == 1 and rep["train"]["lr"] == 0.02
    cfg.write_text("epochs = 1\nwarp_speed = 9\n")
    assert cli.main(["train", "--config", str(cfg), "--data", str(work / "clean"), "--out", str(tmp_path / "p")]) == 2
    cfg.write_text("epochs = many\n")
    assert cli.main(["train", "--config", str(cfg), "--data", str(work / "clean"), "--out", str(tmp_path / "p")]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "none.cfg"), "--data", str(work / "clean"),
                     "--out", str(tmp_path / "p")]) == 2


def test_sweep_table(work):
    out = work / "sweep"
    assert cli.main(["sweep", "--data", str(work / "clean"), "--out", str(out), "--epochs", "1"]) == 0
    lines = (out / "sweep.tsv").read_text().splitlines()
    assert lines[0] == "value\tmean_residual\tba\tasr\tp_asr" and len(lines) == 5
    resid = [float(line.split("\t")[1]) for line in lines[1:]]
    assert resid == sorted(resid)
    assert cli.main(["sweep", "--data", str(work / "clean"), "--out", str(out), "--param", "gamma"]) == 2
