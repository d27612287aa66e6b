"""Seeded synthetic event scenes with exact ground-truth flow.

Each feature point moves along a straight line and fires events at uniformly
spaced timestamps; the emitted pixel is the rounded trajectory position.  No
intensity or contrast-threshold model is involved.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .events import EventStream
from .flow import FlowField

MAX_RETRIES = 1000


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    width: int = 64
    height: int = 64
    duration: int = 50_000  # t1 - t0 in microseconds
    g: int = 5
    num_points: int = 32
    velocity: tuple[float, float] = (0.0, 0.0)  # pixels per duration
    # displacement (a0 + a1 x + a2 y, a3 + a4 x + a5 y); overrides velocity
    affine: tuple[float, float, float, float, float, float] | None = None
    events_per_point: int = 60
    max_speed: float = 64.0
    # fixed t0 positions, one per point; drawn at random when None
    starts: tuple[tuple[float, float], ...] | None = None

    @property
    def dt(self) -> float:
        return self.duration / self.g

    @property
    def t0(self) -> int:
        return int(round(self.dt))

    @property
    def t1(self) -> int:
        return self.t0 + self.duration


@dataclass
class LabeledSample:
    stream: EventStream
    t0: int
    t1: int
    g: int
    flow: FlowField
    config: SceneConfig = field(repr=False)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.stream.x, self.stream.y, self.stream.t, self.stream.p):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _displacement(cfg: SceneConfig, x, y):
    if cfg.affine is None:
        return np.full_like(x, cfg.velocity[0]), np.full_like(y, cfg.velocity[1])
    a = cfg.affine
    return a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y


def _round(v):
    return np.floor(v + 0.5)


def _check(cfg: SceneConfig):
    if cfg.num_points < 1:
        raise ValueError("num_points must be >= 1")
    if cfg.starts is not None and len(cfg.starts) != cfg.num_points:
        raise ValueError("starts must list one position per point")
    if cfg.events_per_point < 2:
        raise ValueError("events_per_point must be >= 2")
    if cfg.affine is None and float(np.hypot(*cfg.velocity)) > cfg.max_speed:
        raise ValueError(f"|velocity| exceeds max_speed {cfg.max_speed}")


def generate_scene(cfg: SceneConfig) -> LabeledSample:
    """One labeled sample; the stream spans ``[t0 - dt, t1]``."""
    _check(cfg)
    rng = np.random.default_rng(cfg.seed)
    t0, t1 = cfg.t0, cfg.t1
    times = np.round(np.linspace(0, t1, cfg.events_per_point)).astype(np.int64)
    s = (times - t0) / cfg.duration  # fraction of the t0->t1 displacement

    xs, ys, ts, ps, idx = [], [], [], [], []
    for k in range(cfg.num_points):
        for _ in range(MAX_RETRIES):
            if cfg.starts is not None:
                x0, y0 = cfg.starts[k]
            else:
                x0 = rng.uniform(0, cfg.width - 1)
                y0 = rng.uniform(0, cfg.height - 1)
            dx, dy = _displacement(cfg, np.float64(x0), np.float64(y0))
            px = _round(x0 + dx * s)
            py = _round(y0 + dy * s)
            if (px.min() >= 0 and py.min() >= 0
                    and px.max() <= cfg.width - 1 and py.max() <= cfg.height - 1):
                break
            if cfg.starts is not None:
                raise ValueError(f"point {k} leaves the frame")
        else:
            raise ValueError(f"could not place point {k} inside the frame")
        xs.append(px)
        ys.append(py)
        ts.append(times)
        ps.append(np.full(len(times), 1 if k % 2 == 0 else -1))
        idx.append(np.full(len(times), k))

    t = np.concatenate(ts)
    order = np.lexsort((np.concatenate(idx), t))
    stream = EventStream(cfg.width, cfg.height,
                         np.concatenate(xs)[order], np.concatenate(ys)[order],
                         t[order], np.concatenate(ps)[order])

    gy, gx = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    fu, fv = _displacement(cfg, gx, gy)
    win = stream.between(t0, t1)
    valid = np.zeros((cfg.height, cfg.width), dtype=bool)
    valid[win.y.astype(np.int64), win.x.astype(np.int64)] = True
    flow = FlowField(np.stack([fu, fv]), valid)
    return LabeledSample(stream, t0, t1, cfg.g, flow, cfg)


def sample_seed(seed: int, index: int) -> int:
    state = np.random.SeedSequence([seed, index]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def generate_dataset(n: int, seed: int, speed_range: tuple[float, float] = (0.0, 6.0),
                     size: tuple[int, int] = (64, 64), **scene) -> list[LabeledSample]:
    """``n`` translating scenes with speeds uniform in ``speed_range``.

    Directions are uniform on the circle.  Use :func:`split_by_parity` for the
    train / held-out split.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = speed_range
    rng = np.random.default_rng(seed)
    speeds = rng.uniform(lo, hi, size=n)
    angles = rng.uniform(0, 2 * np.pi, size=n)
    base = SceneConfig(height=size[0], width=size[1], max_speed=max(hi, 0.0) + 1e-6, **scene)
    out = []
    for k in range(n):
        vel = (float(speeds[k] * np.cos(angles[k])), float(speeds[k] * np.sin(angles[k])))
        if speeds[k] == 0:
            vel = (0.0, 0.0)
        out.append(generate_scene(replace(base, seed=sample_seed(seed, k), velocity=vel)))
    return out


def split_by_parity(samples: list) -> tuple[list, list]:
    """Even indices train, odd indices held out."""
    return samples[0::2], samples[1::2]
