import numpy as np
import pytest

from tmaflow import autodiff as ad
from tmaflow.autodiff import DimensionError, Tensor
from tmaflow.model import (TMA, ModelConfig, forward_single_volume, sequence_loss,
                           upsample_flow)


def tiny(**kw):
    base = dict(g=3, bins=2, feature_dim=8, downsample=4, iters=2, radius=1, levels=2,
                context_dim=4, hidden_dim=4, motion_dim=8, attn_dim=8, encoder_channels=(4, 4),
                corr_channels=(8, 8), flow_channels=(4, 4), head_channels=8)
    base.update(kw)
    return ModelConfig(**base)


def voxels(cfg, size=16, n=None, seed=0):
    rng = np.random.default_rng(seed)
    shape = (cfg.g + 1, cfg.bins, size, size)
    arr = rng.standard_normal(((n,) if n else ()) + shape) * (rng.random(((n,) if n else ()) + shape) < 0.1)
    return arr.astype(np.float32)


def randomize(model, seed=0, scale=0.3):
    """Overwrite every parameter, including zero-initialized ones."""
    rng = np.random.default_rng(seed)
    for p in model.parameters().values():
        p.data = (rng.standard_normal(p.shape) * scale).astype(p.dtype)
    return model


def test_default_config_values():
    cfg = ModelConfig()
    assert (cfg.g, cfg.bins, cfg.feature_dim, cfg.iters, cfg.mpa_layers, cfg.radius,
            cfg.gamma, cfg.mpa_value_projection) == (5, 3, 128, 6, 1, 3, 0.8, "identity")


def test_feature_shape_at_default_width():
    model = TMA(ModelConfig(encoder_channels=(8, 8, 8)))
    f = model.extract_features(Tensor(np.zeros((1, 3, 64, 64))))
    assert f.shape == (1, 8, 8, 128)


def test_indivisible_input_rejected():
    model = TMA(tiny())
    with pytest.raises(DimensionError):
        model.extract_features(Tensor(np.zeros((1, 2, 10, 16))))
    with pytest.raises(DimensionError):
        model(np.zeros((4, 2, 18, 16), dtype=np.float32))


def test_identical_grids_identical_features():
    model = TMA(tiny())
    g = voxels(tiny())[1]
    f = model.extract_features(Tensor(np.stack([g, g, np.zeros_like(g)]))).data
    assert np.array_equal(f[0], f[1])
    f2 = model.extract_features(Tensor(np.zeros((1,) + g.shape))).data
    assert np.array_equal(f[2], f2[0])


def test_context_ranges():
    model = TMA(tiny())
    ctx, hid = model.extract_context(Tensor(voxels(tiny())[:1]))
    assert np.all(np.abs(hid.data) < 1) and np.all(ctx.data >= 0)
    ctx2, hid2 = model.extract_context(Tensor(voxels(tiny())[:1]))
    assert np.array_equal(ctx.data, ctx2.data) and np.array_equal(hid.data, hid2.data)


def test_motion_encoder_shares_weights():
    cfg = tiny()
    model = TMA(cfg)
    rng = np.random.default_rng(0)
    corr = np.repeat(rng.standard_normal((1, 2, cfg.lookup.channels, 4, 4)), cfg.g, axis=0)
    mf = model.encode_motion_features(Tensor(corr), Tensor(rng.standard_normal((2, 2, 4, 4)))).data
    assert mf.shape == (cfg.g, 2, cfg.motion_dim, 4, 4)
    assert all(np.array_equal(mf[0], mf[i]) for i in range(cfg.g))


@pytest.mark.parametrize("g", [1, 2, 3, 5])
def test_aggregation_preserves_shape(g):
    model = randomize(TMA(tiny(g=g)))
    mf = Tensor(np.random.default_rng(g).standard_normal((g, 2, 8, 4, 4)))
    out = model.aggregate_motion_patterns(mf)
    assert out.shape == mf.shape
    # the anchor passes through untouched
    assert np.array_equal(out.data[-1], mf.data[-1])


def test_aggregation_identity_for_g1():
    model = TMA(tiny(g=1))
    mf = Tensor(np.ones((1, 1, 8, 4, 4)))
    assert model.aggregate_motion_patterns(mf) is mf


def test_aggregation_identity_at_init():
    model = TMA(tiny(g=4))
    mf = Tensor(np.random.default_rng(0).standard_normal((4, 2, 8, 4, 4)))
    assert np.array_equal(model.aggregate_motion_patterns(mf).data, mf.data)


def test_attention_rows_sum_to_one():
    model = randomize(TMA(tiny(g=4)), scale=1.0)
    rng = np.random.default_rng(1)
    probs = model.mpa[0].attention(Tensor(rng.standard_normal((2, 48, 8))),
                                   Tensor(rng.standard_normal((2, 16, 8)))).data
    assert probs.shape == (2, 48, 16)
    assert np.abs(probs.sum(-1) - 1).max() < 1e-6


def test_learned_value_projection_runs():
    model = randomize(TMA(tiny(g=3, mpa_value_projection="learned")))
    mf = Tensor(np.random.default_rng(0).standard_normal((3, 1, 8, 4, 4)))
    assert model.aggregate_motion_patterns(mf).shape == mf.shape


def test_update_flow_contracts():
    cfg = tiny()
    model = TMA(cfg)
    rng = np.random.default_rng(0)
    hidden = Tensor(np.tanh(rng.standard_normal((1, 4, 4, 4))))
    ctx = Tensor(rng.random((1, 4, 4, 4)))
    motion = Tensor(rng.standard_normal((1, cfg.g * cfg.motion_dim, 4, 4)))
    flow = Tensor(np.zeros((1, 2, 4, 4)))
    h1, delta = model.update_flow(hidden, ctx, motion, flow)
    assert np.all(np.abs(h1.data) < 1)
    assert not delta.data.any()  # zero-initialized head
    h2, d2 = model.update_flow(hidden, ctx, motion, flow)
    assert np.array_equal(h1.data, h2.data) and np.array_equal(delta.data, d2.data)


def test_upsample_examples():
    low = np.zeros((2, 3, 4))
    low[0] = 1
    up = upsample_flow(Tensor(low), 8).data
    assert up.shape == (2, 24, 32)
    assert np.allclose(up[0], 8) and np.allclose(up[1], 0)
    assert not upsample_flow(Tensor(np.zeros((1, 2, 2, 2))), 4).data.any()


def test_forward_prediction_count_and_totality():
    cfg = tiny()
    model = TMA(cfg)
    assert len(model(voxels(cfg), iters=1)) == 1
    preds = model(np.zeros((cfg.g + 1, cfg.bins, 16, 16), dtype=np.float32))
    assert len(preds) == cfg.iters
    assert preds[-1].shape == (2, 16, 16)
    assert all(np.all(np.isfinite(p.data)) for p in preds)
    again = model(np.zeros((cfg.g + 1, cfg.bins, 16, 16), dtype=np.float32))
    assert np.array_equal(preds[-1].data, again[-1].data)


def test_default_iterations_give_six_predictions():
    cfg = tiny(iters=6)
    assert len(TMA(cfg)(voxels(cfg))) == 6


def test_batched_forward_matches_single():
    cfg = tiny()
    model = randomize(TMA(cfg))
    batch = voxels(cfg, n=2)
    joint = model(batch)[-1].data
    for i in range(2):
        assert np.allclose(joint[i], model(batch[i])[-1].data, atol=1e-5)


def test_wrong_segment_count_rejected():
    cfg = tiny()
    with pytest.raises(DimensionError):
        TMA(cfg)(np.zeros((cfg.g, cfg.bins, 16, 16), dtype=np.float32))


def test_swapping_identical_segments_changes_nothing():
    cfg = tiny(g=3)
    model = randomize(TMA(cfg))
    v = voxels(cfg)
    v[2] = v[1]
    trace_a, trace_b = {}, {}
    model(v, trace=trace_a)
    model(v[[0, 2, 1, 3]], trace=trace_b)
    fa, fb = trace_a["features"].data, trace_b["features"].data
    assert np.array_equal(fa[1], fa[2]) and np.array_equal(fa, fb)
    ma = trace_a["motion"][0].data
    assert np.array_equal(ma[0], ma[1])


def test_g1_matches_single_volume_path():
    cfg = tiny(g=1)
    model = randomize(TMA(cfg))
    v = voxels(cfg, n=2)
    a = [p.data for p in model(v)]
    b = [p.data for p in forward_single_volume(model, v)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_sequence_loss_examples():
    gt = np.zeros((2, 3, 3))
    mask = np.ones((3, 3), bool)
    ones = Tensor(np.ones((2, 3, 3)))
    assert sequence_loss([ones, ones], gt, mask, 0.8).data == pytest.approx(1.8)
    assert sequence_loss([Tensor(gt), Tensor(gt)], gt, mask).data == 0
    single = sequence_loss([ones], gt, mask)
    assert single.data == pytest.approx(ad.l1_loss(ones, gt, mask[None]).data)
    with pytest.raises(ValueError):
        sequence_loss([], gt, mask)


def test_sequence_loss_weights_n6():
    gt = np.zeros((2, 2, 2))
    mask = np.ones((2, 2), bool)
    preds = [Tensor(np.full((2, 2, 2), float(j))) for j in range(1, 7)]
    with ad.replay64():
        preds = [Tensor(p.data.astype(np.float64)) for p in preds]
        loss = sequence_loss(preds, gt, mask, 0.8).data
    # hand sum: 1*.8^5 + 2*.8^4 + 3*.8^3 + 4*.8^2 + 5*.8 + 6
    assert loss == pytest.approx(0.32768 + 0.8192 + 1.536 + 2.56 + 4.0 + 6.0, abs=1e-6)
