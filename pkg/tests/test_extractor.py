import numpy as np
import pytest

from eegtse.errors import AlignmentError, ConfigError, ShapeError
from eegtse.extractor import (
    DilatedFSMN,
    MaskEstimator,
    MossFormerBlock,
    RecurrentBlock,
    SeparatorConfig,
    apply_mask,
    chunked_attention,
    estimate_mask,
    fuse,
    mixed_attention,
)
from eegtse.nn import ParamRegistry, Tensor


def full_attention(q, k, v):
    s = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    w = np.exp(s - s.max(axis=-1, keepdims=True))
    return (w / w.sum(axis=-1, keepdims=True)) @ v


def linear_oracle(q, k, v):
    phi = lambda z: np.where(z > 0, z + 1.0, np.exp(z))  # noqa: E731
    w = phi(q) @ np.swapaxes(phi(k), -1, -2)
    return (w / w.sum(axis=-1, keepdims=True)) @ v


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


# ---------------------------------------------------------------- fusion and masking


def test_fuse_shape_and_eeg_free_case(rng):
    w = rng.standard_normal((6, 10))
    x, e = rng.standard_normal((2, 6, 9)), rng.standard_normal((2, 4, 9))
    assert fuse(Tensor(x), Tensor(e), Tensor(w)).shape == (2, 6, 9)
    out = fuse(Tensor(x), Tensor(np.zeros_like(e)), Tensor(w)).data
    np.testing.assert_allclose(out, np.einsum("oc,bcd->bod", w[:, :6], x), rtol=1e-12)


def test_fuse_is_linear(rng):
    w = Tensor(rng.standard_normal((6, 10)))
    x1, x2 = rng.standard_normal((2, 1, 6, 9))
    e1, e2 = rng.standard_normal((2, 1, 4, 9))
    lhs = fuse(Tensor(x1 + 2 * x2), Tensor(e1 + 2 * e2), w).data
    rhs = fuse(Tensor(x1), Tensor(e1), w).data + 2 * fuse(Tensor(x2), Tensor(e2), w).data
    assert rel(lhs, rhs) < 1e-10


def test_fuse_alignment_error(rng):
    with pytest.raises(AlignmentError):
        fuse(Tensor(np.zeros((1, 6, 9))), Tensor(np.zeros((1, 4, 8))), Tensor(np.zeros((6, 10))))


def test_apply_mask(rng):
    x, m = rng.standard_normal((2, 3, 4)), rng.random((2, 3, 4))
    out = apply_mask(Tensor(x), Tensor(m)).data
    for idx in np.ndindex(x.shape):
        assert out[idx] == x[idx] * m[idx]
    np.testing.assert_array_equal(apply_mask(Tensor(x), Tensor(np.ones_like(x))).data, x)
    assert np.all(apply_mask(Tensor(x), Tensor(np.zeros_like(x))).data == 0)
    with pytest.raises(ShapeError):
        apply_mask(Tensor(x), Tensor(m[..., :3]))


# ---------------------------------------------------------------- attention


@pytest.mark.parametrize("n,chunk", [(10, 64), (64, 64), (7, 7)])
def test_chunked_equals_full_when_sequence_fits(rng, n, chunk):
    q, k, v = (rng.standard_normal((2, n, 4)) for _ in range(3))
    assert rel(chunked_attention(Tensor(q), Tensor(k), Tensor(v), chunk).data, full_attention(q, k, v)) < 1e-12


def test_chunked_attention_is_blockwise(rng):
    q, k, v = (rng.standard_normal((1, 11, 3)) for _ in range(3))
    out = chunked_attention(Tensor(q), Tensor(k), Tensor(v), 4).data
    for lo in range(0, 11, 4):
        sl = slice(lo, min(lo + 4, 11))
        np.testing.assert_allclose(out[:, sl], full_attention(q[:, sl], k[:, sl], v[:, sl]), rtol=1e-12)


def test_separator_attention_matches_oracle_single_precision(rng):
    q, k, v = (rng.standard_normal((1, 50, 8)).astype(np.float32) for _ in range(3))
    out = mixed_attention(Tensor(q), Tensor(k), Tensor(v), 64).data
    assert out.dtype == np.float32
    q64, k64, v64 = (a.astype(np.float64) for a in (q, k, v))
    assert rel(out, full_attention(q64, k64, v64) + linear_oracle(q64, k64, v64)) < 1e-5


# ---------------------------------------------------------------- blocks


@pytest.fixture
def sep_cfg():
    return SeparatorConfig(R=2, chunk_size=8)


def test_mossformer_block_shapes_and_gate(rng, sep_cfg):
    block = MossFormerBlock(ParamRegistry(np.float64, seed=1), "b", 6, sep_cfg)
    x = Tensor(rng.standard_normal((2, 6, 19)))
    out, acts = block.forward(x)
    assert out.shape == x.shape
    for name in ("x", "u", "v", "av", "au", "gate", "out"):
        assert getattr(acts, name).shape == x.shape
    assert np.all(acts.gate > 0) and np.all(acts.gate < 1)


def test_mossformer_zero_output_conv_is_identity(rng, sep_cfg):
    block = MossFormerBlock(ParamRegistry(np.float64, seed=1), "b", 6, sep_cfg)
    block.wm.data[...] = 0.0
    x = rng.standard_normal((1, 6, 12))
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_recurrent_block_identity_and_shape(rng, sep_cfg):
    block = RecurrentBlock(ParamRegistry(np.float64, seed=2), "r", 5, sep_cfg)
    x = rng.standard_normal((2, 5, 30))
    assert block(Tensor(x)).shape == x.shape
    block.wu.data[...] = 0.0
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


@pytest.mark.parametrize("taps,dilations", [(8, (1, 2, 4, 8)), (3, (1, 3)), (5, (2,))])
def test_fsmn_impulse_support(taps, dilations):
    fsmn = DilatedFSMN(ParamRegistry(np.float64, seed=4), "f", 3, taps, dilations)
    n = 401
    x = np.zeros((1, 3, n))
    x[0, :, n // 2] = 1.0
    out = fsmn(Tensor(x)).data
    hit = np.flatnonzero(np.any(np.abs(out[0]) > 1e-14, axis=0))
    expected = SeparatorConfig(fsmn_taps=taps, fsmn_dilations=dilations).fsmn_receptive_field()
    assert hit[-1] - hit[0] + 1 == expected
    if dilations[0] == 1:
        # a unit-dilation first stage fills the gaps left by the wider ones
        assert len(hit) == expected


def test_default_receptive_field():
    assert SeparatorConfig().fsmn_receptive_field() == 106


def test_mask_estimator_nonnegative_and_depth(rng):
    for r in (1, 3, 7):
        est = MaskEstimator(ParamRegistry(np.float64, seed=r), 4, SeparatorConfig(R=r, chunk_size=8))
        assert len(est.blocks) == 2 * r
        m = estimate_mask(Tensor(rng.standard_normal((1, 4, 21))), est)
        assert m.shape == (1, 4, 21) and m.data.min() >= 0


def test_separator_config_validation():
    assert SeparatorConfig().R == 6
    with pytest.raises(ConfigError):
        SeparatorConfig(R=0)
    with pytest.raises(ConfigError):
        SeparatorConfig(fsmn_dilations=(2, 1))
    with pytest.raises(ConfigError):
        SeparatorConfig(chunk_size=0)
    with pytest.raises(ConfigError):
        MossFormerBlock(ParamRegistry(), "b", 6, SeparatorConfig(heads=4))
