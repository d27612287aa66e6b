"""Checks that correlation peaks follow linear motion on raw voxel features."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, replay64
from .correlation import build_correlation_volumes
from .events import split_events, voxelize_windows


def peak_offsets(sample, g: int, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Correlation-argmax error per segment at pixels with reference events.

    Features are the raw voxel grids (one vector of ``bins`` values per pixel).
    For every pixel ``x`` where the reference grid is nonzero and every
    segment ``i``, the argmax of ``C_i(x, .)`` is compared against
    ``x + i * u / g`` with ``u`` the sample's (constant) flow.  Returns
    ``(errors, pixels)`` where ``errors`` is ``g x P`` Euclidean distances.
    """
    h, w = sample.stream.height, sample.stream.width
    vox = voxelize_windows(split_events(sample.stream, sample.t0, sample.t1, g), bins, h, w)
    with replay64():
        vset = build_correlation_volumes([Tensor(v.transpose(1, 2, 0).astype(np.float64))
                                          for v in vox], 1)
    ys, xs = np.nonzero(np.abs(vox[0]).sum(0) > 0)
    u = sample.flow.values[:, ys, xs]
    errors = np.empty((g, len(xs)))
    for i in range(1, g + 1):
        peak = vset.volume(i)[ys, xs].reshape(len(xs), h * w).argmax(-1)
        py, px = np.divmod(peak, w)
        errors[i - 1] = np.hypot(px - (xs + i * u[0] / g), py - (ys + i * u[1] / g))
    return errors, np.stack([xs, ys], -1)


def linear_motion_hit_rates(samples, g: int, bins: int, tol: float = 1.0) -> np.ndarray:
    """Per-segment fraction of event pixels, pooled over ``samples``, whose
    correlation peak lies within ``tol`` pixels of the linear prediction."""
    errs = [peak_offsets(s, g, bins)[0] for s in samples]
    pooled = np.concatenate(errs, axis=1)
    if pooled.shape[1] == 0:
        raise ValueError("no reference events in any sample")
    return (pooled <= tol).mean(axis=1)
