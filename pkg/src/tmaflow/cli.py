"""Command-line entry point: ``synth``, ``train``, ``eval``, ``infer`` and ``viz``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, model_config_from_text, model_config_text
from .dataset import read_dataset, write_dataset
from .events import split_events, voxelize_windows
from .flow import FlowField
from .fpu import subnormals_flushed
from .io import (FormatError, load_checkpoint, read_events, read_flow,
                 save_checkpoint, write_flow)
from .metrics import evaluate, event_mask
from .model import TMA
from .synth import generate_dataset
from .train import evaluate_model, make_optimizer, predict, prepare, train
from .viz import render_flow_image, write_ppm

log = logging.getLogger("tmaflow")


class CLIError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def _pair(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def load_model(path) -> TMA:
    params, cfg_text, _ = load_checkpoint(path)
    model = TMA(model_config_from_text(cfg_text))
    model.load_state(params)
    return model


def checkpoint_path(out_dir: Path, step: int) -> Path:
    return out_dir / f"ckpt_{step:06d}.tmac"


# --------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    if args.n < 1:
        raise CLIError("--n must be >= 1")
    if args.speed_max < 0:
        raise CLIError("--speed-max must be >= 0")
    samples = generate_dataset(args.n, args.seed, (0.0, args.speed_max), args.size,
                               g=args.g, num_points=args.points)
    write_dataset(args.out, samples, {"seed": args.seed, "speed_max": args.speed_max})
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = dict(args.set or [])
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = RunConfig.load(args.config, overrides)
    if not cfg.train_data:
        raise CLIError("config needs train_data")
    if cfg.train.steps < 0:
        raise CLIError("steps must be >= 0")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())

    mc = cfg.model
    data = prepare(read_dataset(cfg.train_data), mc.g, mc.bins)
    held = prepare(read_dataset(cfg.eval_data), mc.g, mc.bins) if cfg.eval_data else None
    model = TMA(mc)
    state = make_optimizer(model, cfg.train)
    echo = model_config_text(mc)

    def save(step, st):
        params = {k: p.data for k, p in model.parameters().items()}
        save_checkpoint(checkpoint_path(out, step), params, echo, st)
        if held is not None:
            report = evaluate_model(model, held)
            with open(out / "eval.log", "a") as fh:
                fh.write(f"step={step} " + report.as_text().replace("\n", " ").strip() + "\n")

    save(0, state)
    with open(out / "train.log", "w") as fh:
        def on_log(step, epe, loss, lr):
            fh.write(f"{step} {epe:.6f} {loss:.6f} {lr:.6e}\n")
            fh.flush()
        state = train(model, data, cfg.train, state, on_log=on_log, on_checkpoint=save)
    steps, every = cfg.train.steps, cfg.train.ckpt_every
    if steps > 0 and (every <= 0 or steps % every):
        save(steps, state)
    print(f"trained {steps} steps; checkpoints in {out}")
    return 0


def cmd_eval(args) -> int:
    samples = read_dataset(args.data)
    gt = np.stack([s.flow.values for s in samples])
    mask = np.stack([s.flow.valid for s in samples])
    if args.pred is not None:
        pred = np.stack([read_flow(Path(args.pred) / f"{s.name}.flo").values for s in samples])
        if pred.shape != gt.shape:
            raise CLIError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    else:
        if args.ckpt is None:
            raise CLIError("eval needs --ckpt or --pred")
        model = load_model(args.ckpt)
        pred = predict(model, prepare(samples, model.cfg.g, model.cfg.bins).voxels)
    print(evaluate(pred, gt, mask).as_text(), end="")
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.ckpt)
    stream = read_events(args.events)
    if args.t1 <= args.t0:
        raise CLIError("--t1 must be greater than --t0")
    h, w = stream.height, stream.width
    f = model.cfg.downsample
    if h % f or w % f:
        raise CLIError(f"sensor {h}x{w} is not divisible by the model's downsample factor {f}")
    split = split_events(stream, args.t0, args.t1, model.cfg.g)
    flow = model(voxelize_windows(split, model.cfg.bins, h, w))[-1].data
    valid = event_mask(stream, (args.t0, args.t1), h, w)
    write_flow(args.out, FlowField(flow.astype(np.float32), valid))
    print(f"wrote {args.out}")
    return 0


def cmd_viz(args) -> int:
    flow = read_flow(args.flow)
    write_ppm(args.out, render_flow_image(flow, args.max_mag))
    print(f"wrote {args.out}")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tmaflow", description="Event-based optical flow toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size, default=(64, 64), help="HxW")
    s.add_argument("--speed-max", type=float, default=6.0)
    s.add_argument("--g", type=int, default=5)
    s.add_argument("--points", type=int, default=32)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    t.add_argument("--set", type=_pair, action="append", metavar="KEY=VALUE",
                   help="override a config key; repeatable")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print metrics on a dataset directory")
    e.add_argument("--ckpt", default=None)
    e.add_argument("--data", required=True)
    e.add_argument("--pred", default=None, help="directory of predicted .flo files")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict flow for one event file")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--events", required=True)
    i.add_argument("--t0", type=int, required=True)
    i.add_argument("--t1", type=int, required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("viz", help="render a flow file as a PPM image")
    v.add_argument("--flow", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--max-mag", type=float, default=None)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with subnormals_flushed():
            return args.func(args)
    except (CLIError, ConfigError, FormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"tmaflow {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
