import json

import numpy as np
import pytest
from scipy import signal

from eegtse import dsp
from eegtse.data.synth import pseudo_speech
from eegtse.errors import LengthError
from eegtse.metrics import (
    SI_SDR_CAP_DB,
    MetricReport,
    SceneMetrics,
    UndefinedReferenceError,
    estoi,
    format_table,
    score_scene,
    si_sdr,
    si_sdr_loss,
    stoi,
    write_reports,
)
from eegtse.nn import Tensor, grad_check


@pytest.fixture(scope="module")
def speech16k():
    return pseudo_speech(np.random.default_rng(5), 3 * 16000, 16000, (100.0, 200.0))


# ---------------------------------------------------------------- SI-SDR


def test_si_sdr_hand_case():
    assert abs(si_sdr([1.0, 1.0], [1.0, 0.0]) - 0.0) <= 1e-9


def test_si_sdr_cap_and_scale(rng):
    s = rng.standard_normal(1000)
    assert si_sdr(s, s) == SI_SDR_CAP_DB
    assert si_sdr(2 * s, s) == SI_SDR_CAP_DB
    est = s + 0.3 * rng.standard_normal(1000)
    base = si_sdr(est, s)
    for alpha in (0.1, 1.0, 10.0):
        assert abs(si_sdr(alpha * est, s) - base) < 1e-6


def test_si_sdr_errors():
    with pytest.raises(UndefinedReferenceError):
        si_sdr([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        si_sdr([1.0, 2.0, 3.0], [1.0, 2.0])


def test_si_sdr_loss_matches_metric_and_gradient(rng):
    s, est = rng.standard_normal(64), rng.standard_normal(64)
    loss = si_sdr_loss(Tensor(est[None, None]), Tensor(s[None, None]))
    assert float(loss.data) == pytest.approx(-si_sdr(est, s), abs=1e-6)
    x = Tensor(est.copy(), requires_grad=True)
    assert grad_check(lambda: si_sdr_loss(x, Tensor(s)), [x]) < 1e-6


def test_si_sdr_loss_orthogonal_estimate(rng):
    s = np.zeros(64)
    s[:32] = rng.standard_normal(32)
    orth = np.zeros(64)
    orth[32:] = rng.standard_normal(32)
    small = float(si_sdr_loss(Tensor(s + 0.1 * orth), Tensor(s)).data)
    big = float(si_sdr_loss(Tensor(s + 1.0 * orth), Tensor(s)).data)
    assert big > small
    # alpha is exactly 0, so only the eps floor bounds the loss (about 95 dB here)
    assert float(si_sdr_loss(Tensor(orth), Tensor(s)).data) > 50


def test_si_sdr_loss_decreases_along_line(rng):
    s, n = rng.standard_normal(256), rng.standard_normal(256)
    losses = [float(si_sdr_loss(Tensor((1 - a) * n + a * s), Tensor(s)).data) for a in np.linspace(0, 1, 11)]
    assert np.all(np.diff(losses) < 0)


# ---------------------------------------------------------------- STOI / ESTOI


def test_stoi_self_similarity(speech16k):
    assert stoi(speech16k, speech16k, 16000) >= 0.999
    assert estoi(speech16k, speech16k, 16000) >= 0.999


def speech_shaped(seed, fs=10000, seconds=3):
    """Noise with a speech-like spectral tilt and a 4 Hz syllabic modulation."""
    rng = np.random.default_rng(seed)
    n = fs * seconds
    x = signal.lfilter([1.0], [1.0, -0.9], rng.standard_normal(n))
    return x * (1 + 0.5 * np.sin(2 * np.pi * 4 * np.arange(n) / fs))


@pytest.mark.parametrize("seed", range(3))
def test_stoi_noise_is_low(seed):
    ref = speech_shaped(seed)
    for k in range(5):
        noise = np.random.default_rng(1000 + 10 * seed + k).standard_normal(ref.size)
        assert stoi(noise, ref, 10000) < 0.3


def test_stoi_noise_below_noisy_speech(speech16k):
    # deeply gated pseudo-speech lifts the noise score (clipping follows the
    # reference envelope), but it stays well below a 0 dB noisy copy
    clean = dsp.resample(speech16k, 16000, 10000)
    for k in range(3):
        noise = np.random.default_rng(k).standard_normal(clean.size) * np.std(clean)
        assert stoi(noise, clean, 10000) < 0.4
        assert stoi(noise, clean, 10000) + 0.2 < stoi(clean + noise, clean, 10000)


def test_stoi_matches_reference_implementation(speech16k, rng):
    pystoi = pytest.importorskip("pystoi")
    fs = 10000
    clean = dsp.resample(speech16k, 16000, fs)
    noisy = clean + 0.5 * rng.standard_normal(clean.size)
    assert stoi(noisy, clean, fs) == pytest.approx(pystoi.stoi(clean, noisy, fs), abs=1e-6)
    assert estoi(noisy, clean, fs) == pytest.approx(pystoi.stoi(clean, noisy, fs, extended=True), abs=1e-6)


def test_stoi_input_rate_invariance(speech16k, rng):
    noisy = speech16k + 0.3 * rng.standard_normal(speech16k.size)
    a = stoi(noisy, speech16k, 16000)
    b = stoi(dsp.resample(noisy, 16000, 20000), dsp.resample(speech16k, 16000, 20000), 20000)
    assert abs(a - b) < 1e-2
    c = stoi(dsp.resample(noisy, 16000, 8000), dsp.resample(speech16k, 16000, 8000), 8000)
    assert -1 <= c <= 1


def test_stoi_too_short():
    with pytest.raises(LengthError):
        stoi(np.ones(2000), np.ones(2000), 10000)


# ---------------------------------------------------------------- reports


def test_report_aggregates_are_exact_means(tmp_path):
    rep = MetricReport("model", [SceneMetrics("a", 1.0, 2.0, 0.5, 0.25), SceneMetrics("b", 3.0, 4.0, 0.7, 0.45)])
    agg = rep.aggregate()
    assert agg["si_sdr"]["mean"] == 2.0 and agg["si_sdr_improvement"]["mean"] == 3.0
    assert agg["stoi"]["std"] == pytest.approx(0.1)
    write_reports(tmp_path / "r.json", [rep])
    assert json.loads((tmp_path / "r.json").read_text())["reports"][0]["aggregate"] == agg
    assert "si_sdr_improvement" in format_table([rep])


def test_score_scene_improvement(speech16k, rng):
    target = speech16k[:16000 * 2]
    mixture = target + rng.standard_normal(target.size)
    est = target + 0.1 * rng.standard_normal(target.size)
    m = score_scene("x", est, target, mixture, 16000)
    assert m.si_sdr_improvement == pytest.approx(si_sdr(est, target) - si_sdr(mixture, target))
    assert 0 <= m.stoi <= 1 and 0 <= m.estoi <= 1
