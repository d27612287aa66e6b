"""Event streams, temporal splitting and voxel-grid construction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int  # microseconds
    p: int  # +1 / -1


@dataclass
class EventStream:
    """Columnar, time-sorted event storage."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.t = np.asarray(self.t, dtype=np.uint64)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns have different lengths")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls(width, height, [], [], [], [])

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventStream":
        return cls(width, height,
                   [e.x for e in events], [e.y for e in events],
                   [e.t for e in events], [e.p for e in events])

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    @property
    def events(self) -> list[Event]:
        return list(self)

    def validate(self) -> None:
        if len(self) and (self.x.max() >= self.width or self.y.max() >= self.height):
            raise ValueError("event outside sensor bounds")
        if np.any(np.diff(self.t.astype(np.int64)) < 0):
            raise ValueError("timestamps are not non-decreasing")
        if not np.all(np.abs(self.p) == 1):
            raise ValueError("polarity must be +1 or -1")

    def between(self, start: float, end: float) -> "EventStream":
        """Events with ``start <= t < end``."""
        tf = self.t.astype(np.float64)
        lo = np.searchsorted(tf, start, side="left")
        hi = np.searchsorted(tf, end, side="left")
        return EventStream(self.width, self.height, self.x[lo:hi], self.y[lo:hi],
                           self.t[lo:hi], self.p[lo:hi])

    def concat(self, other: "EventStream") -> "EventStream":
        return EventStream(self.width, self.height,
                           np.concatenate([self.x, other.x]), np.concatenate([self.y, other.y]),
                           np.concatenate([self.t, other.t]), np.concatenate([self.p, other.p]))


@dataclass
class VoxelGrid:
    values: np.ndarray  # B x H x W
    window: tuple[float, float]

    @property
    def bins(self) -> int:
        return self.values.shape[0]


@dataclass
class SplitWindows:
    g: int
    dt: float
    windows: list[tuple[float, float]]  # auxiliary first, then the g segments
    slices: list[EventStream]

    def __len__(self) -> int:
        return len(self.windows)


def normalize_timestamps(t: np.ndarray, bins: int,
                         t_range: tuple[float, float] | None = None) -> np.ndarray:
    """Map timestamps linearly onto ``[0, bins-1]``.

    By default the first and last timestamp of ``t`` anchor the map.  A window
    whose anchors coincide (single event, or all simultaneous) maps to 0.
    """
    t = np.asarray(t, dtype=np.float64)
    if len(t) == 0:
        return t
    t_first, t_last = (t[0], t[-1]) if t_range is None else t_range
    span = t_last - t_first
    if span <= 0:
        return np.zeros_like(t)
    return (bins - 1) * (t - t_first) / span


def build_voxel_grid(events: EventStream, bins: int, height: int, width: int,
                     window: tuple[float, float] | None = None,
                     t_range: tuple[float, float] | None = None) -> VoxelGrid:
    """Signed bilinear accumulation of events into a ``bins x height x width`` grid.

    Event coordinates are integers, so the spatial kernels pick exactly the
    event pixel and the temporal kernel splits each event across at most two
    adjacent bins.  Accumulation follows event index order.
    """
    if window is None:
        window = (float(events.t[0]), float(events.t[-1])) if len(events) else (0.0, 0.0)
    grid = np.zeros(bins * height * width, dtype=np.float64)
    if len(events):
        ts = normalize_timestamps(events.t, bins, t_range)
        lo = np.floor(ts).astype(np.int64)
        frac = ts - lo
        pix = events.y.astype(np.int64) * width + events.x.astype(np.int64)
        pol = events.p.astype(np.float64)
        # lower bin gets (1 - frac); upper bin gets frac when it exists
        w_lo = pol * (1.0 - frac)
        upper = lo + 1 < bins
        idx = np.concatenate([lo * height * width + pix, (lo[upper] + 1) * height * width + pix[upper]])
        wts = np.concatenate([w_lo, (pol * frac)[upper]])
        order = np.concatenate([np.arange(len(lo)) * 2, np.flatnonzero(upper) * 2 + 1])
        perm = np.argsort(order, kind="stable")
        grid += np.bincount(idx[perm], weights=wts[perm], minlength=grid.size)
    return VoxelGrid(grid.reshape(bins, height, width).astype(np.float32), window)


def split_events(stream: EventStream, t0: float, t1: float, g: int) -> SplitWindows:
    """Cut ``[t0 - dt, t1)`` into an auxiliary window plus ``g`` equal segments.

    Membership is half-open, so an event on a boundary belongs to the later
    window.  The auxiliary window may start before the stream does.
    """
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got t0={t0}, t1={t1}")
    if g < 1:
        raise ValueError(f"need g >= 1, got {g}")
    dt = (t1 - t0) / g
    bounds = [t0 - dt] + [t0 + i * dt for i in range(g)] + [t1]
    windows = list(zip(bounds[:-1], bounds[1:]))
    slices = [stream.between(a, b) for a, b in windows]
    return SplitWindows(g, dt, windows, slices)


def voxelize_windows(split: SplitWindows, bins: int, height: int, width: int) -> np.ndarray:
    """Voxel grids for every window, stacked as ``(g+1) x bins x H x W``.

    Timestamps are normalized per window.
    """
    return np.stack([build_voxel_grid(s, bins, height, width, window=w).values
                     for s, w in zip(split.slices, split.windows)])
