"""Flow colour coding and PPM output."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``h`` in degrees (any range), ``s``/``v`` in [0, 1]; returns float RGB in [0, 1]."""
    h = np.mod(h, 360.0) / 60.0
    c = v * s
    x = c * (1 - np.abs(np.mod(h, 2) - 1))
    z = np.zeros_like(c)
    sector = np.floor(h).astype(int) % 6
    choices = [np.stack(p, -1) for p in
               ((c, x, z), (x, c, z), (z, c, x), (z, x, c), (x, z, c), (c, z, x))]
    rgb = np.choose(sector[..., None], choices)
    return rgb + (v - c)[..., None]


def render_flow_image(flow, max_mag: float | None = None) -> np.ndarray:
    """``H x W x 3`` uint8 image: hue encodes direction, saturation ``|u| / max_mag``.

    Zero flow is white.  ``max_mag`` defaults to the largest magnitude present.
    """
    values = np.asarray(getattr(flow, "values", flow), dtype=np.float64)
    u, v = values[0], values[1]
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = float(mag.max()) if mag.size else 0.0
    sat = np.clip(mag / max_mag, 0.0, 1.0) if max_mag > 0 else np.zeros_like(mag)
    hue = np.degrees(np.arctan2(v, u))
    rgb = hsv_to_rgb(hue, sat, np.ones_like(sat))
    return np.round(255 * rgb).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + image.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", buf)
    if m is None:
        raise ValueError("not an 8-bit binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(buf, dtype=np.uint8, count=h * w * 3, offset=m.end()).reshape(h, w, 3)
