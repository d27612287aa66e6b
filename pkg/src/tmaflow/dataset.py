"""On-disk datasets: one ``.evt`` / ``.flo`` / ``.mask`` triple per sample plus ``meta.txt``."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .config import parse_pairs
from .events import EventStream
from .flow import FlowField
from .io import read_events, read_flow, write_events, write_flow

META = "meta.txt"


@dataclass
class DiskSample:
    stream: EventStream
    t0: int
    t1: int
    g: int
    flow: FlowField
    name: str


def sample_name(index: int) -> str:
    return f"sample_{index:05d}"


def write_dataset(root, samples, meta: dict) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    first = samples[0]
    info = {"n": len(samples), "t0": first.t0, "t1": first.t1, "g": first.g,
            "height": first.stream.height, "width": first.stream.width, **meta}
    (root / META).write_text("".join(f"{k}={v}\n" for k, v in info.items()))
    for k, s in enumerate(samples):
        if (s.t0, s.t1) != (first.t0, first.t1):
            raise ValueError("all samples in a dataset share one time window")
        write_events(root / f"{sample_name(k)}.evt", s.stream)
        write_flow(root / f"{sample_name(k)}.flo", s.flow)


def read_meta(root) -> dict[str, str]:
    path = Path(root) / META
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; not a dataset directory")
    return parse_pairs(path.read_text())


def read_dataset(root) -> list[DiskSample]:
    root = Path(root)
    meta = read_meta(root)
    t0, t1, g = int(meta["t0"]), int(meta["t1"]), int(meta["g"])
    out = []
    for k in range(int(meta["n"])):
        name = sample_name(k)
        out.append(DiskSample(read_events(root / f"{name}.evt"), t0, t1, g,
                              read_flow(root / f"{name}.flo"), name))
    return out
