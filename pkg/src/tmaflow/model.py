"""The temporal-motion-aggregation flow network and its sequence loss.

Batched tensors use NCHW layout.  Event segments are stacked segment-major
along the batch axis (index ``s * N + n``) so the shared-weight encoders run
once over all segments.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .correlation import (CorrelationVolumeSet, LookupConfig, build_pyramid,
                          linear_lookup)
from .flow import FlowField
from .nn import Conv2d, Encoder, LayerNorm, Linear, Module


@dataclass
class ModelConfig:
    g: int = 5
    bins: int = 3
    feature_dim: int = 128
    downsample: int = 8
    iters: int = 6
    mpa_layers: int = 1
    radius: int = 3
    levels: int = 2
    gamma: float = 0.8
    mpa_value_projection: str = "identity"  # identity | learned
    lookup_style: str = "linear"  # linear | same | none
    feature_norm: str = "instance"  # instance | none, matching encoder only
    context_dim: int = 64
    hidden_dim: int = 64
    motion_dim: int = 128
    attn_dim: int = 128
    encoder_channels: tuple[int, ...] = (32, 64, 96)
    corr_channels: tuple[int, int] = (96, 96)
    flow_channels: tuple[int, int] = (64, 32)
    head_channels: int = 128
    init_seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.corr_channels = tuple(int(c) for c in self.corr_channels)
        self.flow_channels = tuple(int(c) for c in self.flow_channels)
        if self.g < 1 or self.iters < 1 or self.bins < 1:
            raise ValueError("g, iters and bins must be >= 1")
        if self.mpa_value_projection not in ("identity", "learned"):
            raise ValueError("mpa_value_projection must be identity or learned")
        if self.lookup_style not in ("linear", "same", "none"):
            raise ValueError(f"unknown lookup_style {self.lookup_style!r}")
        if self.feature_norm not in ("instance", "none"):
            raise ValueError(f"unknown feature_norm {self.feature_norm!r}")
        if self.motion_dim < 3:
            raise ValueError("motion_dim must leave room for the flow channels")

    @property
    def lookup(self) -> LookupConfig:
        return LookupConfig(self.radius, self.levels, self.g, self.lookup_style)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ------------------------------------------------------------------ blocks


class MotionEncoder(Module):
    """Correlation branch plus flow branch, fused to ``motion_dim - 2`` channels,
    with the raw flow appended."""

    def __init__(self, corr_in: int, cfg: ModelConfig, rng):
        c1, c2 = cfg.corr_channels
        f1, f2 = cfg.flow_channels
        self.convc1 = Conv2d(corr_in, c1, 1, rng)
        self.convc2 = Conv2d(c1, c2, 3, rng)
        self.convf1 = Conv2d(2, f1, 7, rng)
        self.convf2 = Conv2d(f1, f2, 3, rng)
        self.fuse = Conv2d(c2 + f2, cfg.motion_dim - 2, 3, rng)

    def forward(self, corr: Tensor, flow: Tensor) -> Tensor:
        c = ad.relu(self.convc2(ad.relu(self.convc1(corr))))
        f = ad.relu(self.convf2(ad.relu(self.convf1(flow))))
        m = ad.relu(self.fuse(ad.concat([c, f], axis=1)))
        return ad.concat([m, flow], axis=1)


class AggregationLayer(Module):
    """Cross-attention from intermediate motion features to the last one, fused
    back through a residual MLP whose final layer starts at zero."""

    def __init__(self, cfg: ModelConfig, rng):
        d, dk = cfg.motion_dim, cfg.attn_dim
        self.norm_q = LayerNorm(d)
        self.norm_k = LayerNorm(d)
        self.to_q = Linear(d, dk, rng, bias=False)
        self.to_k = Linear(d, dk, rng, bias=False)
        self.to_v = Linear(d, d, rng, bias=False) if cfg.mpa_value_projection == "learned" else None
        self.to_out = Linear(d, d, rng)
        self.mlp1 = Linear(2 * d, 2 * d, rng, gain=2.0)
        self.mlp2 = Linear(2 * d, d, rng, zero_init=True)
        self.scale = 1.0 / math.sqrt(dk)

    def attention(self, queries: Tensor, last: Tensor) -> Tensor:
        """Row-stochastic attention weights, ``N x Nq x HW``."""
        q = self.to_q(self.norm_q(queries))
        k = self.to_k(self.norm_k(last))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), self.scale)
        return ad.softmax(scores, axis=-1)

    def forward(self, queries: Tensor, last: Tensor) -> Tensor:
        """``queries`` is ``N x (g-1)*HW x D`` tokens, ``last`` is ``N x HW x D``."""
        probs = self.attention(queries, last)
        v = self.to_v(last) if self.to_v is not None else last
        a = self.to_out(ad.matmul(probs, v))
        h = ad.relu(self.mlp1(ad.concat([queries, a], axis=-1)))
        return ad.add(queries, self.mlp2(h))


class ConvGRU(Module):
    """Convolutional GRU; the update and reset gates share one convolution."""

    def __init__(self, hidden: int, inp: int, rng):
        self.hidden = hidden
        self.convzr = Conv2d(hidden + inp, 2 * hidden, 3, rng, gain=1.0)
        self.convq = Conv2d(hidden + inp, hidden, 3, rng, gain=1.0)

    def forward(self, h: Tensor, x: Tensor) -> Tensor:
        zr = ad.sigmoid(self.convzr(ad.concat([h, x], axis=1)))
        z = ad.getitem(zr, (slice(None), slice(0, self.hidden)))
        r = ad.getitem(zr, (slice(None), slice(self.hidden, None)))
        q = ad.tanh(self.convq(ad.concat([ad.mul(r, h), x], axis=1)))
        return ad.add(ad.mul(ad.sub(1.0, z), h), ad.mul(z, q))


class FlowHead(Module):
    def __init__(self, hidden: int, width: int, rng):
        self.conv1 = Conv2d(hidden, width, 3, rng)
        self.conv2 = Conv2d(width, 2, 3, rng, zero_init=True)

    def forward(self, h: Tensor) -> Tensor:
        return self.conv2(ad.relu(self.conv1(h)))


# ---------------------------------------------------------------- helpers


def interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic 1-D bilinear resampling matrix (corner-aligned)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - lo
    m[np.arange(n_out), lo] = 1 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def upsample_flow(flow: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling with displacements rescaled to full-resolution pixels.

    Accepts ``2 x h x w`` or ``N x 2 x h x w``.
    """
    h, w = flow.shape[-2:]
    ry = Tensor(interp_matrix(h * factor, h))
    rxt = Tensor(interp_matrix(w * factor, w).T)
    up = ad.matmul(ad.matmul(ry, flow), rxt)
    return ad.mul(up, float(factor))


def sequence_loss(preds: Sequence[Tensor], gt, mask, gamma: float = 0.8) -> Tensor:
    """``sum_j gamma^(N-j) * masked_L1(pred_j, gt)``, predictions in iteration order."""
    if isinstance(gt, FlowField):
        gt, mask = gt.values, gt.valid
    n = len(preds)
    if n < 1:
        raise ValueError("need at least one prediction")
    gt = np.asarray(gt)
    mask = np.asarray(mask, dtype=bool)
    # broadcast the pixel mask over the flow components
    mask = np.expand_dims(mask, -3)
    total = None
    for j, pred in enumerate(preds, start=1):
        term = ad.mul(ad.l1_loss(pred, gt.astype(pred.dtype), mask), gamma ** (n - j))
        total = term if total is None else ad.add(total, term)
    return total


def as_voxel_tensor(voxels) -> tuple[Tensor, bool]:
    if isinstance(voxels, Tensor):
        arr = voxels
    else:
        arr = Tensor(np.asarray(voxels))
    batched = arr.ndim == 5
    if not batched:
        arr = ad.reshape(arr, (1,) + arr.shape)
    return arr, batched


# ------------------------------------------------------------------- model


class TMA(Module):
    def __init__(self, cfg: ModelConfig | None = None):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.fnet = Encoder(cfg.bins, cfg.encoder_channels, cfg.feature_dim, cfg.downsample, rng,
                            cfg.feature_norm)
        self.cnet = Encoder(cfg.bins, cfg.encoder_channels, cfg.context_dim + cfg.hidden_dim,
                            cfg.downsample, rng)
        self.menc = MotionEncoder(cfg.lookup.channels, cfg, rng)
        self.mpa = [AggregationLayer(cfg, rng) for _ in range(cfg.mpa_layers)]
        self.gru = ConvGRU(cfg.hidden_dim, cfg.context_dim + cfg.g * cfg.motion_dim + 2, rng)
        self.head = FlowHead(cfg.hidden_dim, cfg.head_channels, rng)

    # -- stages ---------------------------------------------------------

    def _check_dims(self, h: int, w: int):
        f = self.cfg.downsample
        if h % f or w % f:
            raise DimensionError(f"input {h}x{w} not divisible by downsample factor {f}")

    def extract_features(self, grids: Tensor) -> Tensor:
        """Shared encoder over all segments.

        ``grids`` is ``S x B x H x W`` (any stack of voxel grids); returns
        ``S x h x w x D`` channels-last features.
        """
        self._check_dims(*grids.shape[-2:])
        f = self.fnet(grids)
        return ad.transpose(f, (0, 2, 3, 1))

    def extract_context(self, aux: Tensor) -> tuple[Tensor, Tensor]:
        """``(context, hidden0)`` from the auxiliary grid(s), both NCHW."""
        self._check_dims(*aux.shape[-2:])
        out = self.cnet(aux)
        dh = self.cfg.hidden_dim
        hidden = ad.tanh(ad.getitem(out, (slice(None), slice(0, dh))))
        context = ad.relu(ad.getitem(out, (slice(None), slice(dh, None))))
        return context, hidden

    def correlate(self, feats: Tensor, n: int) -> CorrelationVolumeSet:
        """Volumes from segment-major features ``(g+1)*N x h x w x D``."""
        g = self.cfg.g
        _, h, w, d = feats.shape
        stack = ad.reshape(feats, (g + 1, n, h * w, d))
        f0 = ad.getitem(stack, 0)
        rest = ad.getitem(stack, slice(1, None))  # g x N x HW x D
        rest = ad.reshape(ad.transpose(rest, (1, 0, 2, 3)), (n, g * h * w, d))
        corr = ad.matmul(f0, ad.transpose(rest, (0, 2, 1)))
        corr = ad.div(corr, math.sqrt(d))
        corr = ad.reshape(corr, (n, h * w, g, h, w))
        corr = ad.transpose(corr, (2, 0, 1, 3, 4))
        return CorrelationVolumeSet(build_pyramid(corr, self.cfg.levels), d, h, w)

    def encode_motion_features(self, corr: Tensor, flow: Tensor) -> Tensor:
        """``corr`` is ``g x N x C x h x w``; returns motion features ``g x N x Dm x h x w``."""
        g, n = corr.shape[:2]
        c = ad.reshape(corr, (g * n,) + corr.shape[2:])
        f = ad.concat([flow] * g, axis=0)
        mf = self.menc(c, f)
        return ad.reshape(mf, (g, n) + mf.shape[1:])

    def aggregate_motion_patterns(self, mf: Tensor) -> Tensor:
        """Enhance the first ``g-1`` motion features against the last; shape preserved."""
        g, n, d, h, w = mf.shape
        if g == 1 or not self.mpa:
            return mf
        tok = ad.reshape(ad.transpose(mf, (1, 0, 3, 4, 2)), (n, g, h * w, d))
        inter = ad.reshape(ad.getitem(tok, (slice(None), slice(0, g - 1))), (n, (g - 1) * h * w, d))
        last = ad.getitem(tok, (slice(None), slice(g - 1, g)))
        last_flat = ad.reshape(last, (n, h * w, d))
        for layer in self.mpa:
            inter = layer(inter, last_flat)
        tok = ad.concat([ad.reshape(inter, (n, g - 1, h * w, d)), last], axis=1)
        return ad.transpose(ad.reshape(tok, (n, g, h, w, d)), (1, 0, 4, 2, 3))

    def update_flow(self, hidden: Tensor, context: Tensor, motion: Tensor,
                    flow: Tensor) -> tuple[Tensor, Tensor]:
        """One recurrent step; ``motion`` is the channel-concatenated enhanced features."""
        x = ad.concat([context, motion, flow], axis=1)
        hidden = self.gru(hidden, x)
        return hidden, self.head(hidden)

    @staticmethod
    def concat_segments(mf: Tensor) -> Tensor:
        g, n, d, h, w = mf.shape
        return ad.reshape(ad.transpose(mf, (1, 0, 2, 3, 4)), (n, g * d, h, w))

    # -- full pass ------------------------------------------------------

    def forward(self, voxels, iters: int | None = None, trace: dict | None = None):
        """Flow predictions for every iteration, full resolution, in order.

        ``voxels`` is ``(g+1) x B x H x W`` or batched ``N x (g+1) x B x H x W``
        with the auxiliary window first.  Returned tensors are ``N x 2 x H x W``
        (``2 x H x W`` for unbatched input).
        """
        cfg = self.cfg
        x, batched = as_voxel_tensor(voxels)
        n, s, b, hh, ww = x.shape
        if s != cfg.g + 1:
            raise DimensionError(f"expected {cfg.g + 1} voxel grids, got {s}")
        if b != cfg.bins:
            raise DimensionError(f"expected {cfg.bins} bins, got {b}")
        self._check_dims(hh, ww)
        seg = ad.reshape(ad.transpose(x, (1, 0, 2, 3, 4)), (s * n, b, hh, ww))
        feats = self.extract_features(seg)
        vset = self.correlate(feats, n)
        context, hidden = self.extract_context(ad.getitem(seg, slice(0, n)))
        h, w = feats.shape[1:3]
        flow = Tensor(np.zeros((n, 2, h, w)))
        preds = []
        for _ in range(iters or cfg.iters):
            corr = linear_lookup(vset, flow, cfg.lookup)
            mf = self.encode_motion_features(corr, flow)
            mf_hat = self.aggregate_motion_patterns(mf)
            hidden, delta = self.update_flow(hidden, context, self.concat_segments(mf_hat), flow)
            flow = ad.add(flow, delta)
            up = upsample_flow(flow, cfg.downsample)
            preds.append(up if batched else ad.reshape(up, up.shape[1:]))
            if trace is not None:
                trace.setdefault("motion", []).append(mf)
                trace.setdefault("motion_hat", []).append(mf_hat)
                trace.setdefault("lowres", []).append(flow)
        if trace is not None:
            trace["features"] = feats
            trace["volumes"] = vset
            trace["hidden"] = hidden
        return preds


def forward_single_volume(model: TMA, voxels, iters: int | None = None):
    """Two-frame, single-volume refinement path (no splitting, no aggregation).

    Correlates the reference grid with one later grid and looks the volume up
    at ``coords_0 + u``.  Uses ``model``'s weights; ``model.cfg.g`` must be 1.
    """
    from .correlation import pixel_grid, sample_pyramid

    cfg = model.cfg
    if cfg.g != 1:
        raise ValueError("single-volume path needs a g=1 model")
    x, batched = as_voxel_tensor(voxels)
    n, s, b, hh, ww = x.shape
    seg = ad.reshape(ad.transpose(x, (1, 0, 2, 3, 4)), (s * n, b, hh, ww))
    feats = model.extract_features(seg)
    _, h, w, d = feats.shape
    f = ad.reshape(feats, (2, n, h * w, d))
    f1, f2 = ad.getitem(f, 0), ad.getitem(f, 1)
    corr = ad.div(ad.matmul(f1, ad.transpose(f2, (0, 2, 1))), math.sqrt(d))
    pyramid = build_pyramid(ad.reshape(corr, (n, h * w, h, w)), cfg.levels)
    context, hidden = model.extract_context(ad.getitem(seg, slice(0, n)))
    coords0 = Tensor(pixel_grid(h, w).reshape(1, h * w, 2))
    flow = Tensor(np.zeros((n, 2, h, w)))
    preds = []
    for _ in range(iters or cfg.iters):
        u = ad.reshape(ad.transpose(flow, (0, 2, 3, 1)), (n, h * w, 2))
        corr_map = sample_pyramid(pyramid, ad.add(coords0, u), cfg.radius)
        motion = model.menc(corr_map, flow)
        hidden, delta = model.update_flow(hidden, context, motion, flow)
        flow = ad.add(flow, delta)
        up = upsample_flow(flow, cfg.downsample)
        preds.append(up if batched else ad.reshape(up, up.shape[1:]))
    return preds
