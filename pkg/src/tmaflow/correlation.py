"""Temporally-dense correlation volumes, pooled pyramids and linear lookup.

Feature maps are channels-last, ``H x W x D`` or batched ``N x H x W x D``.
Volumes are stored as ``g x N x (H*W) x H x W``: for every reference pixel a
full ``H x W`` similarity map against one later segment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

LOOKUP_STYLES = ("linear", "same", "none")


@dataclass(frozen=True)
class LookupConfig:
    radius: int = 3
    levels: int = 2
    g: int = 5
    style: str = "linear"

    def __post_init__(self):
        if self.radius < 0 or self.levels < 1 or self.g < 1:
            raise ValueError(f"invalid lookup config {self}")
        if self.style not in LOOKUP_STYLES:
            raise ValueError(f"lookup style must be one of {LOOKUP_STYLES}")

    @property
    def window(self) -> int:
        return (2 * self.radius + 1) ** 2

    @property
    def channels(self) -> int:
        return self.levels * self.window


@dataclass
class CorrelationVolumeSet:
    pyramid: list[Tensor]  # level l: g x N x HW x (H >> l) x (W >> l)
    dim: int
    height: int
    width: int
    batched: bool = field(default=True)

    @property
    def g(self) -> int:
        return self.pyramid[0].shape[0]

    @property
    def levels(self) -> int:
        return len(self.pyramid)

    @property
    def volumes(self) -> Tensor:
        return self.pyramid[0]

    def volume(self, i: int, n: int = 0) -> np.ndarray:
        """``C_i`` (1-based) of batch element ``n`` as an ``H x W x H x W`` array."""
        h, w = self.height, self.width
        return self.pyramid[0].data[i - 1, n].reshape(h, w, h, w)


def _tokens(f: Tensor) -> Tensor:
    n, h, w, d = f.shape
    return ad.reshape(f, (n, h * w, d))


def build_pyramid(volume: Tensor, levels: int) -> list[Tensor]:
    """Repeated 2x2 average pooling over the last two axes (odd edges dropped)."""
    h, w = volume.shape[-2:]
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(h, w) < 2 ** (levels - 1):
        raise DimensionError(f"{h}x{w} volume cannot be pooled to {levels} levels")
    out = [volume]
    for _ in range(levels - 1):
        v = out[-1]
        lead = v.shape[:-2]
        h, w = v.shape[-2:]
        h2, w2 = h // 2, w // 2
        if (h, w) != (2 * h2, 2 * w2):
            v = ad.getitem(v, (Ellipsis, slice(0, 2 * h2), slice(0, 2 * w2)))
        v = ad.reshape(v, lead + (h2, 2, w2, 2))
        out.append(ad.mean(v, axis=(-3, -1)))
    return out


def build_correlation_volumes(features: Sequence[Tensor], levels: int = 1) -> CorrelationVolumeSet:
    """Correlate ``features[0]`` against each of ``features[1:]``.

    ``C_i[x, x'] = <F_0(x), F_i(x')> / sqrt(D)``.
    """
    if len(features) < 2:
        raise ValueError("need the reference feature plus at least one segment")
    batched = features[0].ndim == 4
    feats = [f if batched else ad.reshape(f, (1,) + f.shape) for f in features]
    ref = feats[0].shape
    for f in feats[1:]:
        if f.shape != ref:
            raise DimensionError(f"feature shapes differ: {ref} vs {f.shape}")
    n, h, w, d = ref
    g = len(feats) - 1
    f0 = _tokens(feats[0])
    others = ad.concat([_tokens(f) for f in feats[1:]], axis=1)  # N x g*HW x D
    corr = ad.matmul(f0, ad.transpose(others, (0, 2, 1)))
    corr = ad.div(corr, math.sqrt(d))
    corr = ad.reshape(corr, (n, h * w, g, h, w))
    corr = ad.transpose(corr, (2, 0, 1, 3, 4))
    return CorrelationVolumeSet(build_pyramid(corr, levels), d, h, w, batched)


def window_offsets(radius: int) -> np.ndarray:
    """Integer ``(dx, dy)`` offsets, ``dy`` major, as a ``(2r+1)^2 x 2`` array."""
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=-1)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Identity coordinates ``(x, y)`` in row-major pixel order, ``HW x 2``."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)


def sample_pyramid(pyramid: Sequence[Tensor], centers: Tensor, radius: int) -> Tensor:
    """Sample every level on the ``(2r+1)^2`` window around ``centers``.

    ``pyramid[l]`` has shape ``lead x HW x h_l x w_l``; ``centers`` is
    ``lead x HW x 2`` in level-0 pixel units.  Returns
    ``lead x (L*(2r+1)^2) x H x W`` where ``H x W`` is the level-0 map size.
    """
    lead = centers.shape[:-2]
    hw = centers.shape[-2]
    h, w = pyramid[0].shape[-2:]
    m = int(np.prod(lead)) * hw
    k = (2 * radius + 1) ** 2
    flat_centers = ad.reshape(centers, (m, 2))
    out = []
    for lvl, vol in enumerate(pyramid):
        hl, wl = vol.shape[-2:]
        c = ad.div(flat_centers, float(2 ** lvl)) if lvl else flat_centers
        s = ad.window_sample(ad.reshape(vol, (m, hl, wl)), c, radius)  # m x k
        s = ad.reshape(s, lead + (h, w, k))
        nlead = len(lead)
        perm = tuple(range(nlead)) + (nlead + 2, nlead, nlead + 1)
        out.append(ad.transpose(s, perm))
    return ad.concat(out, axis=len(lead))


def lookup_centers(flow: Tensor, g: int, style: str = "linear") -> Tensor:
    """Per-segment lookup centres, ``g x N x HW x 2``, from flow ``N x 2 x H x W``."""
    n, _, h, w = flow.shape
    coords0 = Tensor(pixel_grid(h, w).reshape(1, 1, h * w, 2))
    u = ad.reshape(ad.transpose(flow, (0, 2, 3, 1)), (1, n, h * w, 2))
    if style == "linear":
        du = ad.div(u, float(g))
        steps = Tensor(np.arange(1, g + 1, dtype=np.float64).reshape(g, 1, 1, 1))
        centers = ad.add(coords0, ad.mul(du, steps))
    elif style == "same":
        centers = ad.add(coords0, ad.concat([u] * g, axis=0))
    elif style == "none":
        centers = ad.add(coords0, Tensor(np.zeros((g, n, 1, 1))))
    else:
        raise ValueError(f"unknown lookup style {style!r}")
    return centers


def linear_lookup(vset: CorrelationVolumeSet, flow: Tensor, cfg: LookupConfig) -> Tensor:
    """Sample each ``C_i`` around ``coords_0 + i * flow / g``.

    ``flow`` is ``2 x H x W`` (returns ``g x C x H x W``) or ``N x 2 x H x W``
    (returns ``g x N x C x H x W``) with ``C = L * (2r+1)^2``.
    """
    batched = flow.ndim == 4
    if not batched:
        flow = ad.reshape(flow, (1,) + flow.shape)
    if vset.g != cfg.g:
        raise ValueError(f"volume set has g={vset.g}, lookup config g={cfg.g}")
    if cfg.levels > vset.levels:
        raise ValueError(f"lookup needs {cfg.levels} levels, pyramid has {vset.levels}")
    centers = lookup_centers(flow, cfg.g, cfg.style)
    out = sample_pyramid(vset.pyramid[:cfg.levels], centers, cfg.radius)
    if not batched:
        out = ad.reshape(out, (out.shape[0],) + out.shape[2:])
    return out
