"""Dataset tensors, the training loop and held-out evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .events import split_events, voxelize_windows
from .fpu import subnormals_flushed
from .metrics import MetricReport, evaluate
from .model import TMA, sequence_loss
from .optim import OneCycle, OptimizerState, clip_grad_norm, optimizer_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 4e-4
    weight_decay: float = 1e-4
    clip: float = 1.0  # global grad-norm clip; <= 0 disables
    seed: int = 0
    ckpt_every: int = 500


@dataclass
class Arrays:
    voxels: np.ndarray  # n x (g+1) x B x H x W
    flow: np.ndarray  # n x 2 x H x W
    valid: np.ndarray  # n x H x W

    def __len__(self) -> int:
        return len(self.voxels)

    def batch(self, idx) -> "Arrays":
        return Arrays(self.voxels[idx], self.flow[idx], self.valid[idx])


def voxelize_sample(sample, g: int, bins: int) -> np.ndarray:
    h, w = sample.stream.height, sample.stream.width
    split = split_events(sample.stream, sample.t0, sample.t1, g)
    return voxelize_windows(split, bins, h, w)


def prepare(samples: Sequence, g: int, bins: int) -> Arrays:
    return Arrays(np.stack([voxelize_sample(s, g, bins) for s in samples]),
                  np.stack([s.flow.values for s in samples]),
                  np.stack([s.flow.valid for s in samples]))


def predict(model: TMA, voxels: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Final-iteration flow for every sample, ``n x 2 x H x W``."""
    out = []
    for i in range(0, len(voxels), batch_size):
        out.append(model(voxels[i:i + batch_size])[-1].data)
    return np.concatenate(out)


def evaluate_model(model: TMA, data: Arrays, batch_size: int = 8) -> MetricReport:
    return evaluate(predict(model, data.voxels, batch_size), data.flow, data.valid)


def make_optimizer(model: TMA, cfg: TrainConfig) -> OptimizerState:
    return OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay,
                          schedule=OneCycle(cfg.lr, cfg.steps))


def train_step(model: TMA, batch: Arrays, state: OptimizerState,
               clip: float) -> tuple[float, float, float]:
    """Returns ``(loss, final-prediction EPE, lr used)``."""
    params = model.parameters()
    with ad.Tape() as tape:
        preds = model(batch.voxels)
        loss = sequence_loss(preds, batch.flow, batch.valid, model.cfg.gamma)
    tape.backward(loss)
    grads = {name: p.grad for name, p in params.items()}
    clip_grad_norm(grads, clip)
    lr = state.current_lr()
    optimizer_step(params, grads, state)
    err = np.sqrt(((preds[-1].data - batch.flow) ** 2).sum(axis=1))
    epe = float(err[batch.valid].mean()) if batch.valid.any() else float("nan")
    return float(loss.data), epe, lr


def train(model: TMA, data: Arrays, cfg: TrainConfig, state: OptimizerState | None = None,
          on_log: Callable[[int, float, float, float], None] | None = None,
          on_checkpoint: Callable[[int, OptimizerState], None] | None = None) -> OptimizerState:
    """Run ``cfg.steps`` AdamW steps over shuffled mini-batches of ``data``.

    Batch order comes from ``cfg.seed`` alone, so two runs with the same seed
    and initial weights are bit-identical.  Flush-to-zero is on for the
    duration of the call (see :mod:`tmaflow.fpu`).
    """
    with subnormals_flushed():
        return _train(model, data, cfg, state, on_log, on_checkpoint)


def _train(model, data, cfg, state, on_log, on_checkpoint) -> OptimizerState:
    state = state or make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    order = np.empty(0, dtype=np.int64)
    for step in range(state.step, cfg.steps):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(data))])
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        loss, epe, lr = train_step(model, data.batch(idx), state, cfg.clip)
        if on_log is not None:
            on_log(step + 1, epe, loss, lr)
        if on_checkpoint is not None and cfg.ckpt_every > 0 and (step + 1) % cfg.ckpt_every == 0:
            on_checkpoint(step + 1, state)
    return state
