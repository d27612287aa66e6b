import subprocess
import sys

import numpy as np
import pytest

from tmaflow.cli import main
from tmaflow.io import load_checkpoint, read_flow
from tmaflow.metrics import MetricReport
from tmaflow.viz import read_ppm

TINY = ("g=2\nbins=2\nfeature_dim=8\ndownsample=4\niters=2\nradius=1\nlevels=2\n"
        "context_dim=4\nhidden_dim=4\nmotion_dim=8\nattn_dim=8\nencoder_channels=4,4\n"
        "corr_channels=8,8\nflow_channels=4,4\nhead_channels=8\nbatch_size=2\n")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(root), "--n", "4", "--seed", "3", "--size", "16x16",
                 "--g", "2", "--points", "6"]) == 0
    return root


def write_config(tmp_path, dataset, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(TINY + f"train_data={dataset}\neval_data={dataset}\n" + extra)
    return path


def test_synth_writes_dataset(dataset):
    names = sorted(p.name for p in dataset.iterdir())
    assert "meta.txt" in names
    assert {"sample_00000.evt", "sample_00000.flo", "sample_00000.mask"} <= set(names)
    assert "n=4" in (dataset / "meta.txt").read_text()


def test_synth_is_deterministic(tmp_path):
    for d in ("a", "b"):
        main(["synth", "--out", str(tmp_path / d), "--n", "2", "--seed", "1", "--size", "8x8"])
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_eval_perfect_prediction(dataset, capsys):
    assert main(["eval", "--data", str(dataset), "--pred", str(dataset)]) == 0
    rep = MetricReport.from_text(capsys.readouterr().out)
    assert rep.epe == 0 and rep.npe[1.0] == 0 and rep.valid_count > 0


def test_zero_steps_writes_initial_checkpoint_only(tmp_path, dataset):
    out = tmp_path / "run"
    cfg = write_config(tmp_path, dataset, "steps=0\n")
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.tmac")) == ["ckpt_000000.tmac"]
    assert (out / "train.log").read_text() == ""
    params, text, state = load_checkpoint(out / "ckpt_000000.tmac")
    assert "g=2" in text and state is not None and state.step == 0


def test_training_is_reproducible(tmp_path, dataset, capsys):
    cfg = write_config(tmp_path, dataset, "steps=3\nckpt_every=2\n")
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").glob("*.tmac"))
    assert names == ["ckpt_000000.tmac", "ckpt_000002.tmac", "ckpt_000003.tmac"]
    for n in names + ["train.log", "eval.log"]:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    log = (tmp_path / "a" / "train.log").read_text().splitlines()
    assert [line.split()[0] for line in log] == ["1", "2", "3"]
    assert len((tmp_path / "a" / "eval.log").read_text().splitlines()) == 3

    ckpt = str(tmp_path / "a" / "ckpt_000003.tmac")
    assert main(["eval", "--ckpt", ckpt, "--data", str(dataset)]) == 0
    assert np.isfinite(MetricReport.from_text(capsys.readouterr().out).epe)

    flo = tmp_path / "pred.flo"
    assert main(["infer", "--ckpt", ckpt, "--events", str(dataset / "sample_00000.evt"),
                 "--t0", "5000", "--t1", "55000", "--out", str(flo)]) == 0
    pred = read_flow(flo)
    assert pred.values.shape == (2, 16, 16) and pred.valid.any()

    ppm = tmp_path / "pred.ppm"
    assert main(["viz", "--flow", str(flo), "--out", str(ppm), "--max-mag", "6"]) == 0
    assert read_ppm(ppm).shape == (16, 16, 3)


def test_set_overrides_config(tmp_path, dataset):
    cfg = write_config(tmp_path, dataset, "steps=5\n")
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--set", "steps=1",
                 "--set", "eval_data="]) == 0
    assert "steps=1" in (out / "config.txt").read_text().splitlines()
    assert not (out / "eval.log").exists()


@pytest.mark.parametrize("argv", [
    ["eval", "--data", "/nonexistent", "--pred", "/nonexistent"],
    ["viz", "--flow", "/nonexistent.flo", "--out", "/tmp/x.ppm"],
    ["infer", "--ckpt", "/nonexistent", "--events", "x", "--t0", "0", "--t1", "1", "--out", "y"],
])
def test_missing_files_fail_cleanly(argv, capsys):
    assert main(argv) == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_config_fails_cleanly(tmp_path, dataset, capsys):
    cfg = write_config(tmp_path, dataset, "not_a_key=1\n")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "not_a_key" in capsys.readouterr().err


def test_corrupt_event_file_reports_offset(tmp_path, dataset, capsys):
    bad = tmp_path / "bad.evt"
    bad.write_bytes(b"XXXX" + (dataset / "sample_00000.evt").read_bytes()[4:])
    ckpt = tmp_path / "c"
    main(["train", "--config", str(write_config(tmp_path, dataset, "steps=0\n")),
          "--out", str(ckpt)])
    assert main(["infer", "--ckpt", str(ckpt / "ckpt_000000.tmac"), "--events", str(bad),
                 "--t0", "0", "--t1", "10", "--out", str(tmp_path / "o.flo")]) == 1
    assert "offset 0" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tmaflow", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    assert all(c in res.stdout for c in ("synth", "train", "eval", "infer", "viz"))
    res = subprocess.run([sys.executable, "-m", "tmaflow", "frobnicate"], capture_output=True)
    assert res.returncode != 0
