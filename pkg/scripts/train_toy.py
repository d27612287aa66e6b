"""Toy end-to-end training run on synthetic translating scenes.

Generates 64x64 scenes with speeds up to 6 px, trains the toy configuration
for the configured number of steps on one thread and reports held-out
metrics before and after training.  Results go to stdout and, with
``--json``, to a file.

    OPENBLAS_NUM_THREADS=1 python scripts/train_toy.py --json runs/toy/result.json
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402

from tmaflow.config import RunConfig, model_config_text  # noqa: E402
from tmaflow.io import save_checkpoint  # noqa: E402
from tmaflow.model import TMA  # noqa: E402
from tmaflow.synth import generate_dataset, split_by_parity  # noqa: E402
from tmaflow.train import evaluate_model, make_optimizer, prepare, train  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent


def build_data(n_train: int, n_heldout: int, seed: int, size: int, speed_max: float):
    """Even-indexed scenes train, odd-indexed ones are held out."""
    n = 2 * max(n_train, n_heldout)
    samples = generate_dataset(n, seed, (0.0, speed_max), (size, size))
    tr, ho = split_by_parity(samples)
    return tr[:n_train], ho[:n_heldout]


def mean_speed(samples) -> float:
    return float(np.mean([np.hypot(*s.flow.values[:, 0, 0]) for s in samples]))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "toy.cfg"))
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--n-train", type=int, default=512)
    ap.add_argument("--n-heldout", type=int, default=64)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--speed-max", type=float, default=6.0)
    ap.add_argument("--log-every", type=int, default=50)
    ap.add_argument("--ckpt", default=None, help="write the final checkpoint here")
    ap.add_argument("--json", default=None, help="write the result summary here")
    args = ap.parse_args(argv)

    overrides = dict(kv.split("=", 1) for kv in args.set)
    cfg = RunConfig.load(args.config, overrides)
    mc = cfg.model
    t_start = time.time()
    tr, ho = build_data(args.n_train, args.n_heldout, args.data_seed, args.size, args.speed_max)
    dtr, dho = prepare(tr, mc.g, mc.bins), prepare(ho, mc.g, mc.bins)
    model = TMA(mc)
    init = evaluate_model(model, dho)
    speed = mean_speed(ho)
    print(f"data {len(tr)} train / {len(ho)} held-out, held-out mean speed {speed:.3f}")
    print("init  " + init.as_text().replace("\n", " "), flush=True)

    window = []
    t_train = time.time()

    def on_log(step, epe, loss, lr):
        window.append((epe, loss))
        if step % args.log_every == 0:
            e, l = np.mean(window[-args.log_every:], axis=0)
            print(f"step {step} epe {e:.4f} loss {l:.4f} lr {lr:.3e} "
                  f"t {time.time() - t_train:.0f}s", flush=True)

    state = make_optimizer(model, cfg.train)
    train(model, dtr, cfg.train, state, on_log=on_log)
    train_seconds = time.time() - t_train
    final = evaluate_model(model, dho)
    print("final " + final.as_text().replace("\n", " "), flush=True)

    if args.ckpt:
        params = {k: p.data for k, p in model.parameters().items()}
        save_checkpoint(args.ckpt, params, model_config_text(mc), state)
    result = {
        "steps": cfg.train.steps,
        "heldout_mean_speed": speed,
        "init_epe": init.epe,
        "final_epe": final.epe,
        "final_1pe": final.npe[1.0],
        "final_3pe": final.npe[3.0],
        "final_outlier_pct": final.outlier_pct,
        "valid_count": final.valid_count,
        "train_seconds": train_seconds,
        "total_seconds": time.time() - t_start,
    }
    print(json.dumps(result, indent=1))
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(json.dumps(result, indent=1) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
