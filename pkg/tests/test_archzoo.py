"""Architecture zoo: shape contracts, counting oracle, determinism, wiring checks."""
import numpy as np
import pytest

from mfseg.archzoo import (
    FAMILIES,
    Model,
    ModelSpec,
    ResidualBlock,
    build_model,
    count_parameters,
    default_dropout_schedule,
    load_checkpoint,
    load_named_arrays,
    save_checkpoint,
)
from mfseg.layers import ForwardCtx

RNG = np.random.default_rng(0)

ALL_VARIANTS = [
    ModelSpec("unet", depth=2, base_width=4),
    ModelSpec("unetpp", depth=2, base_width=4),
    ModelSpec("unetpp", depth=2, base_width=4, deep_supervision=True),
    ModelSpec("resunet", depth=2, base_width=4),
    ModelSpec("resunetpp", depth=2, base_width=4),
    ModelSpec("attention_unet", depth=2, base_width=4),
    ModelSpec("fpn", depth=2, base_width=4, backbone="resnet18"),
    ModelSpec("fpn", depth=2, base_width=4, backbone="inceptionv3"),
    ModelSpec("linknet", depth=2, base_width=4, backbone="resnet18"),
    ModelSpec("linknet", depth=2, base_width=4, backbone="inceptionv3"),
]


def unet_param_oracle(depth, bw, in_ch=1):
    """Layer-by-layer count: sum of k*k*cin*cout + cout over the block plan."""
    conv = lambda cin, cout, k: k * k * cin * cout + cout
    ch = [bw * 2**i for i in range(depth + 1)]
    total, prev = 0, in_ch
    for i in range(depth):
        total += conv(prev, ch[i], 3) + conv(ch[i], ch[i], 3)
        prev = ch[i]
    total += conv(ch[depth - 1], ch[depth], 3) + conv(ch[depth], ch[depth], 3)
    for i in range(depth):
        total += 4 * 4 * ch[i + 1] * ch[i] + ch[i]  # transposed conv
        total += conv(2 * ch[i], ch[i], 3) + conv(ch[i], ch[i], 3)
    return total + conv(ch[0], 1, 1)


def test_unet_depth1_basewidth2_has_527_parameters():
    model = build_model(ModelSpec("unet", depth=1, base_width=2))
    assert unet_param_oracle(1, 2) == 527
    assert count_parameters(model) == 527


def test_unet_count_matches_oracle_other_sizes():
    for depth, bw in [(2, 4), (3, 8), (2, 2)]:
        model = build_model(ModelSpec("unet", depth=depth, base_width=bw))
        assert count_parameters(model) == unet_param_oracle(depth, bw)


def test_parameter_count_monotone_in_base_width():
    for fam, bb in [("unet", "none"), ("fpn", "resnet18"), ("linknet", "inceptionv3")]:
        small = count_parameters(build_model(ModelSpec(fam, depth=2, base_width=4, backbone=bb)))
        big = count_parameters(build_model(ModelSpec(fam, depth=2, base_width=8, backbone=bb)))
        assert big > small


@pytest.mark.parametrize("spec", ALL_VARIANTS, ids=lambda s: f"{s.family}-{s.backbone}-ds{s.deep_supervision}")
def test_output_matches_input_dims_and_range(spec):
    model = build_model(spec)
    for w in (32, 64, 128):
        for h in (32, 64):
            x = RNG.random((1, h, w))
            y = model.forward(x)
            assert y.shape == (1, h, w, 1)
            assert np.all(y > 0.0) and np.all(y < 1.0)
            assert np.all(np.isfinite(y))


def test_unet_bottleneck_dims():
    model = build_model(ModelSpec("unet", depth=4, base_width=2))
    model.forward(RNG.random((1, 32, 64)))
    b, c, h, w = model.trace["bridge"]
    assert (w, h) == (4, 2)  # 64x32 input over four 2x2 pools


def test_linknet_resnet18_post_stem_quarter_resolution():
    model = build_model(ModelSpec("linknet", depth=3, base_width=8, backbone="resnet18"))
    model.forward(RNG.random((1, 64, 64)))
    b, c, h, w = model.trace["stem"]
    assert (h, w) == (16, 16)


def test_indivisible_dims_raise():
    model = build_model(ModelSpec("unet", depth=3, base_width=2))
    with pytest.raises(ValueError, match="divisible"):
        model.forward(RNG.random((1, 20, 64)))


def test_invalid_spec_combinations():
    with pytest.raises(ValueError, match="backbone"):
        ModelSpec("unet", backbone="resnet18")
    with pytest.raises(ValueError, match="dropout_schedule"):
        ModelSpec("unet", depth=3, dropout_schedule=(0.1, 0.2))
    with pytest.raises(ValueError, match="unetpp"):
        ModelSpec("resunet", deep_supervision=True)
    with pytest.raises(ValueError, match="family"):
        ModelSpec("vnet")
    with pytest.raises(ValueError):
        ModelSpec("unet", dropout_schedule=(0.1, 0.2, 1.0))


def test_default_dropout_schedule_canonical_depth4():
    assert default_dropout_schedule(4) == (0.1, 0.1, 0.2, 0.2, 0.3)
    assert len(default_dropout_schedule(2)) == 3


def test_build_is_deterministic_from_seed():
    a = build_model(ModelSpec("attention_unet", depth=2, base_width=4, seed=5))
    b = build_model(ModelSpec("attention_unet", depth=2, base_width=4, seed=5))
    pa, pb = a.parameters(), b.parameters()
    assert pa.keys() == pb.keys()
    for k in pa:
        assert np.array_equal(pa[k].data, pb[k].data)
    c = build_model(ModelSpec("attention_unet", depth=2, base_width=4, seed=6))
    assert any(not np.array_equal(pa[k].data, c.parameters()[k].data) for k in pa)


def test_eval_forward_deterministic():
    model = build_model(ModelSpec("resunetpp", depth=2, base_width=4, seed=2))
    x = RNG.random((2, 32, 32))
    assert np.array_equal(model.forward(x), model.forward(x))


def test_train_eval_equal_when_dropout_all_zero():
    # classic unet has no batch norm, so zero dropout makes the modes identical
    for fam in ("unet", "attention_unet"):
        spec = ModelSpec(fam, depth=2, base_width=4, dropout_schedule=(0.0, 0.0, 0.0))
        model = build_model(spec)
        x = RNG.random((2, 32, 32))
        eval_out = model.forward(x)
        model.mode = "train"
        train_out = model.forward(x, rng=np.random.default_rng(0))
        assert np.array_equal(eval_out, train_out)


def test_dropout_active_in_train_mode():
    spec = ModelSpec("unet", depth=2, base_width=4, dropout_schedule=(0.5, 0.5, 0.5))
    model = build_model(spec)
    x = RNG.random((1, 32, 32))
    eval_out = model.forward(x)
    model.mode = "train"
    train_out = model.forward(x, rng=np.random.default_rng(3))
    assert not np.array_equal(eval_out, train_out)
    with pytest.raises(ValueError, match="RNG"):
        model.forward_heads(x, training=True, rng=None)


def test_attention_coefficients_range_and_dims():
    spec = ModelSpec("attention_unet", depth=3, base_width=4)
    model = build_model(spec)
    model.forward(RNG.random((2, 32, 64)))
    maps = model.attention_maps
    assert len(maps) == 3
    for i, coeff in enumerate(maps):
        assert coeff.shape == (2, 1, 32 // 2**i, 64 // 2**i)
        assert np.all(coeff >= 0.0) and np.all(coeff <= 1.0)


def test_residual_block_zero_weights_is_identity():
    rng = np.random.default_rng(4)
    block = ResidualBlock(6, 6, rng)
    for t in block.named_parameters().values():
        t.data[...] = 0.0
    from mfseg.autodiff import Tensor

    x = Tensor(rng.normal(size=(2, 6, 8, 8)).astype(np.float32))
    for training in (False, True):
        y = block(x, ForwardCtx(training=training))
        assert np.array_equal(y.data, x.data)


def test_unetpp_deep_supervision_heads():
    spec = ModelSpec("unetpp", depth=3, base_width=2, deep_supervision=True)
    model = build_model(spec)
    x = RNG.random((1, 32, 32))
    heads = model.forward_heads(x)
    assert heads.data.shape == (1, 3, 32, 32)
    avg = model.forward(x)
    assert np.allclose(avg[..., 0], heads.data.mean(axis=1), atol=1e-7)
    pruned = build_model(ModelSpec("unetpp", depth=3, base_width=2, deep_supervision=True, ds_head=2))
    out = pruned.forward(x)
    assert out.shape == (1, 32, 32, 1)


def test_checkpoint_roundtrip(tmp_path):
    spec = ModelSpec("resunetpp", depth=2, base_width=4, seed=9)
    model = build_model(spec)
    # make running stats non-trivial so buffers are exercised
    model.mode = "train"
    model.forward(RNG.random((2, 32, 32)), rng=np.random.default_rng(1))
    model.mode = "eval"
    x = RNG.random((1, 32, 32))
    before = model.forward(x)
    path = save_checkpoint(model, tmp_path / "ckpt.npz")
    restored = load_checkpoint(path)
    assert restored.spec == spec.resolved()
    for k, t in model.parameters().items():
        assert np.array_equal(t.data, restored.parameters()[k].data)
    for k, v in model.buffers().items():
        assert np.array_equal(v, restored.buffers()[k])
    assert np.array_equal(before, restored.forward(x))


def test_checkpoint_rejects_unknown_format(tmp_path):
    import numpy as _np

    bad = tmp_path / "bad.npz"
    with open(bad, "wb") as fh:
        _np.savez(fh, __format__=_np.array("other-format"), __spec__=_np.array("{}"))
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(bad)


def test_backbone_weight_loading_hook(tmp_path):
    donor = build_model(ModelSpec("fpn", depth=2, base_width=4, backbone="resnet18", seed=1))
    path = save_checkpoint(donor, tmp_path / "donor.npz")
    target = build_model(ModelSpec("fpn", depth=2, base_width=4, backbone="resnet18", seed=2))
    n = load_named_arrays(target, path, prefix="encoder.")
    assert n > 0
    for k, t in target.parameters().items():
        if k.startswith("encoder."):
            assert np.array_equal(t.data, donor.parameters()[k].data)
    # non-encoder weights untouched (different seed -> different values)
    head_keys = [k for k in target.parameters() if not k.startswith("encoder.")]
    assert any(
        not np.array_equal(target.parameters()[k].data, donor.parameters()[k].data)
        for k in head_keys
    )


def test_model_mode_validation():
    model = build_model(ModelSpec("unet", depth=1, base_width=2))
    with pytest.raises(ValueError):
        model.mode = "predict"
    assert model.mode == "eval"
