"""Binary event files, Middlebury flow files and checkpoints.

All formats are little-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .events import EventStream
from .flow import FlowField
from .optim import OneCycle, OptimizerState

EVENT_MAGIC = b"EVT1"
EVENT_HEADER = struct.Struct("<4sHHQ")
EVENT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])  # packed, 13 bytes

FLOW_MAGIC = b"PIEH"  # float32 202021.25
FLOW_HEADER = struct.Struct("<4sii")

CKPT_MAGIC = b"TMAC"
CKPT_VERSION = 1


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# ------------------------------------------------------------------ events


def encode_events(stream: EventStream) -> bytes:
    rec = np.empty(len(stream), dtype=EVENT_RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    return EVENT_HEADER.pack(EVENT_MAGIC, stream.width, stream.height, len(stream)) + rec.tobytes()


def decode_events(buf: bytes) -> EventStream:
    if len(buf) < 4 or buf[:4] != EVENT_MAGIC:
        raise FormatError("bad event-file magic", 0)
    if len(buf) < EVENT_HEADER.size:
        raise FormatError("truncated event-file header", len(buf))
    _, width, height, count = EVENT_HEADER.unpack_from(buf)
    start = EVENT_HEADER.size
    rsize = EVENT_RECORD.itemsize
    expected = start + count * rsize
    if len(buf) < expected:
        whole = (len(buf) - start) // rsize
        raise FormatError(f"truncated: header declares {count} events, file holds {whole}",
                          start + whole * rsize)
    if len(buf) > expected:
        raise FormatError("trailing bytes after last event", expected)
    rec = np.frombuffer(buf, dtype=EVENT_RECORD, count=count, offset=start)
    bad_t = np.flatnonzero(np.diff(rec["t"].astype(np.int64)) < 0) if count > 1 else []
    if len(bad_t):
        i = int(bad_t[0]) + 1
        raise FormatError(f"timestamp of event {i} decreases", start + i * rsize)
    bad_p = np.flatnonzero(np.abs(rec["p"].astype(np.int16)) != 1)
    if len(bad_p):
        i = int(bad_p[0])
        raise FormatError(f"event {i} has polarity {int(rec['p'][i])}", start + i * rsize + 12)
    bad_xy = np.flatnonzero((rec["x"] >= width) | (rec["y"] >= height))
    if len(bad_xy):
        i = int(bad_xy[0])
        raise FormatError(f"event {i} lies outside the {width}x{height} sensor", start + i * rsize)
    return EventStream(width, height, rec["x"].copy(), rec["y"].copy(),
                       rec["t"].copy(), rec["p"].copy())


def write_events(path, stream: EventStream) -> None:
    Path(path).write_bytes(encode_events(stream))


def read_events(path) -> EventStream:
    return decode_events(Path(path).read_bytes())


# -------------------------------------------------------------------- flow


def mask_path(path) -> Path:
    return Path(path).with_suffix(".mask")


def encode_flow(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype="<f4")
    _, h, w = values.shape
    return FLOW_HEADER.pack(FLOW_MAGIC, w, h) + np.ascontiguousarray(values.transpose(1, 2, 0)).tobytes()


def decode_flow(buf: bytes) -> np.ndarray:
    if len(buf) < FLOW_HEADER.size:
        raise FormatError("truncated flow header", len(buf))
    tag, w, h = FLOW_HEADER.unpack_from(buf)
    if tag != FLOW_MAGIC:
        raise FormatError("bad flow tag", 0)
    if w < 0 or h < 0:
        raise FormatError(f"negative flow size {w}x{h}", 4)
    expected = FLOW_HEADER.size + 8 * w * h
    if len(buf) != expected:
        raise FormatError(f"flow payload is {len(buf) - FLOW_HEADER.size} bytes, "
                          f"expected {8 * w * h}", min(len(buf), expected))
    data = np.frombuffer(buf, dtype="<f4", offset=FLOW_HEADER.size).reshape(h, w, 2)
    return np.ascontiguousarray(data.transpose(2, 0, 1)).astype(np.float32)


def write_flow(path, flow: FlowField, with_mask: bool = True) -> None:
    Path(path).write_bytes(encode_flow(flow.values))
    if with_mask:
        mask_path(path).write_bytes(flow.valid.astype(np.uint8).tobytes())


def read_flow(path) -> FlowField:
    values = decode_flow(Path(path).read_bytes())
    mp = mask_path(path)
    h, w = values.shape[1:]
    if mp.exists():
        raw = mp.read_bytes()
        if len(raw) != h * w:
            raise FormatError(f"mask holds {len(raw)} bytes, expected {h * w}", min(len(raw), h * w))
        valid = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(bool)
    else:
        valid = np.ones((h, w), dtype=bool)
    return FlowField(values, valid)


# ------------------------------------------------------------- checkpoints


def _pack_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated checkpoint", len(self.buf))
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            at = self.pos
            (nlen,) = self.unpack("<H")
            name = self.take(nlen).decode("utf-8")
            if name in out:
                raise FormatError(f"duplicate tensor {name!r}", at)
            (rank,) = self.unpack("<B")
            dims = self.unpack(f"<{rank}I") if rank else ()
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(self.take(4 * size), dtype="<f4").reshape(dims)
            out[name] = arr.astype(np.float32)
        return out


def save_checkpoint(path, params: dict[str, np.ndarray], config_text: str,
                    state: OptimizerState | None = None) -> None:
    cfg = config_text.encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION),
             struct.pack("<I", len(cfg)), cfg, _pack_tensors(params)]
    if state is None:
        parts.append(struct.pack("<B", 0))
    else:
        sched = state.schedule
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Q5d", state.step, state.lr, state.beta1, state.beta2,
                                 state.eps, state.weight_decay))
        if sched is None:
            parts.append(struct.pack("<B", 0))
        else:
            parts.append(struct.pack("<BdQdd", 1, sched.peak_lr, sched.total_steps,
                                     sched.warmup_frac, sched.div))
        parts.append(_pack_tensors(state.m))
        parts.append(_pack_tensors(state.v))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str, OptimizerState | None]:
    """Returns ``(params, config_text, optimizer_state_or_None)``."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (version,) = r.unpack("<I")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (clen,) = r.unpack("<I")
    config_text = r.take(clen).decode("utf-8")
    params = r.tensors()
    (has_state,) = r.unpack("<B")
    state = None
    if has_state:
        step, lr, b1, b2, eps, wd = r.unpack("<Q5d")
        (has_sched,) = r.unpack("<B")
        sched = None
        if has_sched:
            peak, total, warm, div = r.unpack("<dQdd")
            sched = OneCycle(peak, total, warm, div)
        state = OptimizerState(lr, b1, b2, eps, wd, step, sched)
        state.m = {k: v.copy() for k, v in r.tensors().items()}
        state.v = {k: v.copy() for k, v in r.tensors().items()}
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes in checkpoint", r.pos)
    return params, config_text, state
