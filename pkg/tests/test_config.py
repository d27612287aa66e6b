import pytest

from tmaflow.config import (ConfigError, RunConfig, model_config_from_text, model_config_text,
                            parse_pairs)
from tmaflow.model import ModelConfig


def test_defaults_when_empty():
    cfg = RunConfig.from_text("")
    assert cfg.model == ModelConfig()
    assert (cfg.model.g, cfg.model.radius, cfg.model.gamma) == (5, 3, 0.8)
    assert cfg.train.steps == 2000 and cfg.out_dir == "runs/default"


def test_text_round_trip():
    cfg = RunConfig.from_text("g=3\nencoder_channels=8,16\nlr=0.001\nout_dir=/tmp/x\n")
    again = RunConfig.from_text(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()
    assert cfg.model.encoder_channels == (8, 16) and cfg.train.lr == 0.001


def test_every_key_is_written():
    text = RunConfig().to_text()
    assert [line.split("=")[0] for line in text.splitlines()] == RunConfig.keys()


def test_overrides_win():
    cfg = RunConfig.from_text("g=3\nsteps=10\n", {"g": "2", "seed": "7"})
    assert (cfg.model.g, cfg.train.steps, cfg.train.seed) == (2, 10, 7)


def test_comments_and_blank_lines():
    assert parse_pairs("# header\n\n a = 1  # trailing\nb=x=y\n") == {"a": "1", "b": "x=y"}


@pytest.mark.parametrize("text", ["bogus=1\n", "g=1\ng=2\n", "g\n", "g=three\n", "g=0\n",
                                  "lookup_style=sideways\n", "feature_norm=batch\n"])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_model_config_text_round_trip():
    cfg = ModelConfig(g=2, bins=4, lookup_style="same", corr_channels=(3, 5))
    assert model_config_from_text(model_config_text(cfg)) == cfg
    with pytest.raises(ConfigError):
        model_config_from_text("steps=3\n")


def test_load_from_file(tmp_path):
    (tmp_path / "run.cfg").write_text("iters=2\n")
    assert RunConfig.load(tmp_path / "run.cfg").model.iters == 2
