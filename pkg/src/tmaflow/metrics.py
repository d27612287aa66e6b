"""End-point error, N-pixel error and outlier percentage.

Statistics over an empty mask are ``nan`` (undefined), never 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventStream

UNDEFINED = float("nan")


def _values(f) -> np.ndarray:
    return np.asarray(getattr(f, "values", f), dtype=np.float64)


def endpoint_errors(pred, gt) -> np.ndarray:
    """Per-pixel ``||pred - gt||_2`` for ``... x 2 x H x W`` fields."""
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return np.sqrt(((p - g) ** 2).sum(axis=-3))


def _mask(mask, shape) -> np.ndarray:
    m = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return np.broadcast_to(m, shape)


def epe(pred, gt, mask=None) -> float:
    err = endpoint_errors(pred, gt)
    m = _mask(mask, err.shape)
    return float(err[m].mean()) if m.any() else UNDEFINED


def npe(pred, gt, mask=None, m_px: float = 1.0) -> float:
    """Percentage of masked pixels with EPE strictly greater than ``m_px``."""
    if m_px <= 0:
        raise ValueError("M must be positive")
    err = endpoint_errors(pred, gt)
    m = _mask(mask, err.shape)
    return float(100.0 * (err[m] > m_px).mean()) if m.any() else UNDEFINED


def outlier_pct(pred, gt, mask=None) -> float:
    """Percentage with EPE > 3 px and EPE > 5% of the ground-truth magnitude."""
    err = endpoint_errors(pred, gt)
    mag = np.sqrt((_values(gt) ** 2).sum(axis=-3))
    m = _mask(mask, err.shape)
    if not m.any():
        return UNDEFINED
    out = (err > 3.0) & (err > 0.05 * mag)
    return float(100.0 * out[m].mean())


def event_mask(stream: EventStream, window: tuple[float, float], height: int,
               width: int) -> np.ndarray:
    """Pixels with at least one event in ``[t0, t1)``."""
    win = stream.between(*window)
    mask = np.zeros((height, width), dtype=bool)
    mask[win.y.astype(np.int64), win.x.astype(np.int64)] = True
    return mask


@dataclass
class MetricReport:
    epe: float
    npe: dict[float, float] = field(default_factory=dict)
    outlier_pct: float = UNDEFINED
    valid_count: int = 0

    def as_text(self) -> str:
        """Flat ``key=value`` lines; undefined values print as ``nan``."""
        lines = [f"epe={self.epe:.6f}"]
        for m in sorted(self.npe):
            lines.append(f"{m:g}pe={self.npe[m]:.6f}")
        lines.append(f"outlier_pct={self.outlier_pct:.6f}")
        lines.append(f"valid_count={self.valid_count}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kv = dict(line.split("=", 1) for line in text.split() if "=" in line)
        npe_vals = {float(k[:-2]): float(v) for k, v in kv.items() if k.endswith("pe") and k != "epe"}
        return cls(float(kv["epe"]), npe_vals, float(kv["outlier_pct"]), int(kv["valid_count"]))


def evaluate(pred, gt, mask=None, thresholds=(1.0, 3.0)) -> MetricReport:
    """Pixel-pooled metrics; works for single fields or stacked ``n x 2 x H x W``."""
    err = endpoint_errors(pred, gt)
    m = _mask(mask, err.shape)
    return MetricReport(epe(pred, gt, m), {t: npe(pred, gt, m, t) for t in thresholds},
                        outlier_pct(pred, gt, m), int(m.sum()))
