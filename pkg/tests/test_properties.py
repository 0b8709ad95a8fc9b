"""Property-based checks of the invariants the pipeline relies on."""

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eegtse import dsp
from eegtse.codec import CodecConfig, decode_speech
from eegtse.data import make_splits
from eegtse.extractor import MaskEstimator, SeparatorConfig, estimate_mask
from eegtse.eeg_encoder import normalize_adjacency
from eegtse.metrics import si_sdr, si_sdr_loss
from eegtse.nn import ParamRegistry, Tensor
from eegtse.nn import functional as F

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2 ** 31 - 1)


@given(seeds, st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.integers(1, 3), st.integers(0, 20))
def test_conv_transpose_is_adjoint(seed, c_in, c_out, k, stride, extra):
    rng = np.random.default_rng(seed)
    n = k + stride * extra
    x = rng.standard_normal((2, c_in, n))
    w = rng.standard_normal((c_out, c_in, k))
    y = F.conv1d(Tensor(x), Tensor(w), stride=stride).data
    g = rng.standard_normal(y.shape)
    back = F.conv1d_transpose(Tensor(g), Tensor(w), stride=stride).data
    assert back.shape == x.shape
    assert np.isclose(np.sum(y * g), np.sum(x * back), rtol=1e-10, atol=1e-10)


@given(seeds, st.integers(1, 12), st.integers(1, 12), st.floats(0.1, 30))
def test_attention_rows_stay_in_value_hull(seed, n, m, scale):
    rng = np.random.default_rng(seed)
    q = scale * rng.standard_normal((1, n, 4))
    k = scale * rng.standard_normal((1, m, 4))
    v = rng.standard_normal((1, m, 3))
    lo, hi = v.min(axis=1, keepdims=True), v.max(axis=1, keepdims=True)
    out = F.softmax_attention(Tensor(q), Tensor(k), Tensor(v)).data
    assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)
    # the eps in the normalizer shrinks rows toward the origin
    out = F.linear_attention(Tensor(q), Tensor(k), Tensor(v)).data
    assert np.all(out >= np.minimum(lo, 0) - 1e-9) and np.all(out <= np.maximum(hi, 0) + 1e-9)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_bn_elu_finite_and_bounded_below(x):
    c = x.shape[1]
    out = F.bn_elu(Tensor(x), Tensor(np.ones(c)), Tensor(np.zeros(c)), axis=1, training=True).data
    assert np.all(np.isfinite(out)) and np.all(out >= -1)


@given(seeds, st.floats(1e-3, 1e3), st.integers(16, 200))
def test_si_sdr_scale_invariant(seed, alpha, n):
    rng = np.random.default_rng(seed)
    s, e = rng.standard_normal(n), rng.standard_normal(n)
    assert abs(si_sdr(alpha * e, s) - si_sdr(e, s)) < 1e-7
    if alpha >= 0.1:
        # eps in the loss matters only for near-silent estimates
        loss = float(si_sdr_loss(Tensor(alpha * e), Tensor(s)).data)
        assert abs(loss + si_sdr(e, s)) < 1e-3


@given(seeds, st.floats(0.5, 20), st.floats(21, 60))
def test_band_power_additive_over_split_bands(seed, cut1, cut2):
    x = np.random.default_rng(seed).standard_normal((2, 512))
    spec = dsp.stft(x, 128.0, 128, 64)
    lo, mid, hi = dsp.BandDef("lo", 0.0, cut1), dsp.BandDef("mid", cut1, cut2), dsp.BandDef("hi", cut2, 64.0)
    assume(all(np.any((spec.freqs >= b.lo) & (spec.freqs < b.hi)) for b in (lo, mid, hi)))
    parts = dsp.band_power(spec, (lo, mid, hi))
    whole = dsp.band_power(spec, (dsp.BandDef("all", 0.0, 64.0),))
    np.testing.assert_allclose(parts.sum(axis=-1), whole[..., 0], rtol=1e-9)


@given(st.integers(3, 60), seeds)
def test_splits_partition_ids(n, seed):
    ids = [f"s{i}" for i in range(n)]
    m = make_splits(ids, seed=seed)
    parts = [set(m.train), set(m.validation), set(m.test)]
    assert sum(map(len, parts)) == n and set().union(*parts) == set(ids)
    assert m.train


@given(seeds, st.integers(1, 8), finite)
def test_decoder_is_linear(seed, frames, a):
    cfg = CodecConfig(channels=8)
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((8, 1, cfg.kernel_len)))
    x, y = rng.standard_normal((2, 1, 8, frames))
    lhs = decode_speech(Tensor(x + a * y), w, cfg).data
    rhs = decode_speech(Tensor(x), w, cfg).data + a * decode_speech(Tensor(y), w, cfg).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


@given(seeds, st.integers(1, 3), st.integers(3, 40))
def test_mask_nonnegative(seed, r, frames):
    est = MaskEstimator(ParamRegistry(np.float64, seed=seed), 4, SeparatorConfig(R=r, chunk_size=8))
    x = 5 * np.random.default_rng(seed).standard_normal((1, 4, frames))
    assert estimate_mask(Tensor(x), est).data.min() >= 0


@given(arrays(np.float64, (5, 5), elements=st.floats(0, 10)))
def test_normalized_adjacency_symmetric_and_contractive(a):
    n = normalize_adjacency(a + a.T)
    np.testing.assert_allclose(n, n.T, atol=1e-12)
    assert np.max(np.abs(np.linalg.eigvalsh(n))) <= 1 + 1e-9
