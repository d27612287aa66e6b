import numpy as np
import pytest

from tmaflow.fpu import _libm, subnormals_flushed
from tmaflow.model import TMA
from tmaflow.synth import generate_dataset
from tmaflow.train import TrainConfig, prepare, train

from test_acceptance import small_model_config


def subnormals_survive() -> bool:
    tiny = np.nextafter(np.float32(0), np.float32(1))
    return bool(np.array([tiny]) * np.float32(1.0) != 0)


def test_context_restores_environment():
    assert subnormals_survive()
    with subnormals_flushed():
        if _libm() is None:
            pytest.skip("flush-to-zero not available on this platform")
        assert not subnormals_survive()
    assert subnormals_survive()


def test_context_restores_after_exception():
    with pytest.raises(RuntimeError):
        with subnormals_flushed():
            raise RuntimeError
    assert subnormals_survive()


def test_train_leaves_environment_untouched():
    cfg = small_model_config(g=2)
    data = prepare(generate_dataset(2, seed=0, size=(16, 16), g=2), cfg.g, cfg.bins)
    train(TMA(cfg), data, TrainConfig(steps=1, batch_size=1))
    assert subnormals_survive()
