"""Whole-network shape algebra, structural identities, weights format."""

import numpy as np
import pytest

from sformer import autodiff as ad
from sformer.autodiff import Tensor
from sformer.errors import DimensionError, FormatError
from sformer.fat import FatConfig
from sformer.network import ModelConfig, SFormer, center_crop
from sformer.weights_io import expected_file_size, load_weights, save_weights


def tiny_cfg(**overrides):
    base = dict(base_width=4, height=64, width=64, init_seed=0,
                fat=FatConfig(patch=4, depth=1, heads=2, embed=16))
    base.update(overrides)
    return ModelConfig(**base)


def rand_image(h, w, seed=0, batch=None):
    rng = np.random.default_rng(seed)
    shape = (3, h, w) if batch is None else (batch, 3, h, w)
    return rng.random(shape).astype(np.float32)


def test_forward_shape_and_range():
    model = SFormer(tiny_cfg())
    x = rand_image(64, 64, seed=1)
    out = model.forward(x)
    assert out.shape == (3, 64, 64)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_bottleneck_internal_shape():
    model = SFormer(tiny_cfg())
    trace = model.encode_decode_trace(rand_image(64, 64, seed=2))
    shapes = dict(trace)
    assert shapes["bottleneck"] == (1, 32, 4, 4)  # base 4 * 8 channels at H/16


def test_zero_head_is_identity():
    model = SFormer(tiny_cfg())
    model.head.w.data[...] = 0.0
    model.head.b.data[...] = 0.0
    x = rand_image(64, 64, seed=3)
    out = model.forward(x)
    np.testing.assert_array_equal(out.data, x)


def test_trace_channel_sequences():
    cfg = ModelConfig(base_width=16, height=128, width=128, init_seed=0,
                      fat=FatConfig(patch=4, depth=1, heads=2, embed=16))
    model = SFormer(cfg)
    trace = model.encode_decode_trace(rand_image(128, 128, seed=4))
    enc = [s for name, s in trace if name.startswith("enc_rgb.stage")]
    assert [s[1] for s in enc] == [16, 32, 64, 128]
    dec = [s for name, s in trace if name.startswith("dec")]
    assert [s[1] for s in dec] == [128, 64, 32, 16]
    # decoder spatial dims mirror the encoder's in reverse
    assert [s[2] for s in dec] == [s[2] for s in reversed(enc)]
    trace2 = model.encode_decode_trace(rand_image(128, 128, seed=4))
    assert trace == trace2


def test_toggles_change_values_not_shapes():
    x = rand_image(64, 64, seed=5)
    outs = {}
    for label, kw in [
        ("bl", dict(use_fast=False, use_fat=False)),
        ("vit", dict(use_fast=False, use_fat=False, use_plain_vit=True)),
        ("fat", dict(use_fast=False, use_fat=True)),
        ("fast", dict(use_fast=True, use_fat=False)),
        ("full", dict(use_fast=True, use_fat=True)),
    ]:
        model = SFormer(tiny_cfg(**kw))
        assert model.cfg.ablation_label() == label
        out = model.forward(x)
        assert out.shape == (3, 64, 64)
        outs[label] = out.data
    assert not np.allclose(outs["bl"], outs["full"])
    assert not np.allclose(outs["bl"], outs["vit"])


def test_resolution_mismatch_rejected():
    model = SFormer(tiny_cfg())
    with pytest.raises(DimensionError, match="resolution"):
        model.forward(rand_image(32, 32))


def test_config_validation():
    with pytest.raises(DimensionError):
        tiny_cfg(use_fat=True, use_plain_vit=True).validate()
    with pytest.raises(DimensionError):
        tiny_cfg(height=48, width=48).validate()  # not divisible by 16*patch
    # BL tolerates 16-divisible resolutions that a patched bottleneck cannot use
    ModelConfig(base_width=4, height=48, width=48,
                use_fast=False, use_fat=False).validate()


def test_forward_deterministic():
    model = SFormer(tiny_cfg())
    x = rand_image(64, 64, seed=6)
    a = model.forward(x).data
    b = model.forward(x).data
    np.testing.assert_array_equal(a, b)


def test_batch_forward():
    model = SFormer(tiny_cfg())
    x = rand_image(64, 64, seed=7, batch=2)
    out = model.forward(x)
    assert out.shape == (2, 3, 64, 64)
    single = model.forward(x[0])
    np.testing.assert_allclose(out.data[0], single.data, atol=1e-6)


def test_center_crop_identity_and_crop():
    t = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
    same = center_crop(t, (4, 4))
    assert same is t
    cropped = center_crop(t, (2, 2))
    np.testing.assert_array_equal(cropped.data[0, 0], [[5.0, 6.0], [9.0, 10.0]])
    with pytest.raises(DimensionError):
        center_crop(t, (8, 8))


# ---------------------------------------------------------------------------
# parameter count oracle
# ---------------------------------------------------------------------------

def conv_params(cin, cout, k):
    return cout * cin * k * k + cout


def block_params(cin, cout):
    return conv_params(cin, cout, 3) + conv_params(cout, cout, 3)


def encoder_params(cin, c):
    total = 0
    for i in range(4):
        cout = c * (2 ** i)
        total += block_params(cin, cout)
        cin = cout
    return total


def fast_params(ch):
    total = 3 * conv_params(ch, ch, 1)          # q, k, v projections
    total += 2 * (2 * ch)                        # two channel layer norms
    total += conv_params(ch, 2 * ch, 1)          # mlp in
    total += conv_params(2 * ch, ch, 1)          # mlp out
    return total


def mha_params(d):
    return 4 * (d * d + d)


def fat_params(cb, d, depth, patch, tokens):
    total = 2 * conv_params(cb, d, patch)        # rgb + snr patch embeds
    total += tokens * d                          # positional table
    total += mha_params(d)                       # cross-attention
    per_layer = 2 * d                            # pre-attention layer norm
    per_layer += mha_params(d)
    per_layer += 2 * d                           # affn layer norm
    per_layer += (d // 4) * d + d // 4           # channel attention fc1
    per_layer += d * (d // 4) + d                # channel attention fc2
    per_layer += conv_params(2, 1, 3)            # spatial attention conv
    per_layer += 2 * d * 9 + 2 * d               # depthwise conv, multiplier 2
    total += depth * per_layer
    total += (cb * patch * patch) * d + cb * patch * patch  # de-embedding
    return total


def decoder_params(c):
    total = 0
    prev = 8 * c
    for i in reversed(range(4)):
        skip = c * (2 ** i)
        total += prev * skip * 4 + skip          # 2x2 transposed conv
        total += block_params(2 * skip, skip)
        prev = skip
    return total


def test_parameter_count_matches_analytic_tally():
    c, d, depth, heads, patch = 16, 128, 4, 4, 4
    cfg = ModelConfig(base_width=c, height=256, width=256, init_seed=0,
                      fat=FatConfig(patch=patch, depth=depth, heads=heads, embed=d))
    model = SFormer(cfg)
    cb = 8 * c
    tokens = (256 // 16 // patch) ** 2
    expected = encoder_params(3, c) + encoder_params(1, c)
    expected += sum(fast_params(c * (2 ** i)) for i in range(4))
    expected += fat_params(cb, d, depth, patch, tokens)
    expected += decoder_params(c)
    expected += conv_params(c, 3, 1)             # residual head
    assert model.param_count() == expected


def test_parameter_count_bl_is_plain_unet():
    c = 8
    cfg = ModelConfig(base_width=c, height=64, width=64, use_fast=False,
                      use_fat=False, init_seed=0)
    model = SFormer(cfg)
    expected = encoder_params(3, c) + decoder_params(c)
    expected += block_params(8 * c, 8 * c)       # conv bottleneck
    expected += conv_params(c, 3, 1)
    assert model.param_count() == expected


# ---------------------------------------------------------------------------
# weights container
# ---------------------------------------------------------------------------

def test_save_load_roundtrip_bit_exact(tmp_path):
    model = SFormer(tiny_cfg())
    path = tmp_path / "model.sfw"
    save_weights(model.registry, path)
    loaded = load_weights(path)
    assert loaded.names() == model.registry.names()
    for p in model.registry:
        np.testing.assert_array_equal(loaded[p.name].data, p.data)

    twin = SFormer(tiny_cfg(init_seed=99))
    twin.load_state_from(loaded)
    x = rand_image(64, 64, seed=8)
    np.testing.assert_array_equal(twin.forward(x).data, model.forward(x).data)


def test_corrupt_header_rejected(tmp_path):
    model = SFormer(tiny_cfg())
    path = tmp_path / "model.sfw"
    save_weights(model.registry, path)
    raw = bytearray(path.read_bytes())
    raw[1] ^= 0xFF
    bad = tmp_path / "bad.sfw"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_weights(bad)


def test_truncated_file_rejected(tmp_path):
    model = SFormer(tiny_cfg())
    path = tmp_path / "model.sfw"
    save_weights(model.registry, path)
    raw = path.read_bytes()
    cut = tmp_path / "cut.sfw"
    cut.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(FormatError):
        load_weights(cut)


def test_checksum_guard(tmp_path):
    model = SFormer(tiny_cfg())
    path = tmp_path / "model.sfw"
    save_weights(model.registry, path)
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0x01  # flip one payload bit
    bad = tmp_path / "flip.sfw"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="checksum"):
        load_weights(bad)


def test_file_size_formula(tmp_path):
    model = SFormer(tiny_cfg())
    path = tmp_path / "model.sfw"
    save_weights(model.registry, path)
    assert path.stat().st_size == expected_file_size(model.registry)


def test_load_state_rejects_mismatched_registry(tmp_path):
    model = SFormer(tiny_cfg())
    other = SFormer(tiny_cfg(base_width=8))
    with pytest.raises(DimensionError):
        model.load_state_from(other.registry)


# ---------------------------------------------------------------------------
# gradients through the whole network
# ---------------------------------------------------------------------------

def test_full_model_gradients_tiny():
    model = SFormer(tiny_cfg())
    x = Tensor(rand_image(64, 64, seed=9))
    target = Tensor(rand_image(64, 64, seed=10))

    def f():
        diff = model.forward(x) - target
        return ad.tmean(diff * diff)

    # floor keeps central differences meaningful against float32 forward
    # noise and ReLU/clamp kink crossings
    err = ad.grad_check(f, list(model.registry), h=1e-3, n_samples=64, seed=0,
                        min_grad=0.05)
    assert err < 1e-2
