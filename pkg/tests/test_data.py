import json

import numpy as np
import pytest
from scipy.io import wavfile

from eegtse import dsp
from eegtse.data import (
    SynthConfig,
    crop_scene,
    load_split,
    make_splits,
    preprocess_eeg,
    read_eeg,
    read_manifest,
    read_scene,
    read_wav,
    synth_scene,
    write_dataset,
    write_eeg,
    write_wav,
)
from eegtse.errors import ConfigError, FormatError
from eegtse.types import EEGRecording, Waveform

# ---------------------------------------------------------------- WAV


def test_wav_float32_round_trip_is_bitwise(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000).astype(np.float32)
    write_wav(tmp_path / "a.wav", Waveform(x, 8000))
    back = read_wav(tmp_path / "a.wav")
    assert back.fs == 8000
    np.testing.assert_array_equal(back.samples, x)


def test_wav_pcm16_round_trip(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000)
    write_wav(tmp_path / "a.wav", Waveform(x, 16000), pcm16=True)
    assert np.max(np.abs(read_wav(tmp_path / "a.wav").samples - x)) <= 2.0 ** -15


def test_wav_stereo_channels(tmp_path, rng):
    left, right = rng.uniform(-1, 1, (2, 300)).astype(np.float32)
    wavfile.write(tmp_path / "s.wav", 8000, np.stack([left, right], axis=1))
    w = read_wav(tmp_path / "s.wav")
    assert w.samples.shape == (2, 300)
    np.testing.assert_array_equal(w.samples[0], left)
    np.testing.assert_array_equal(w.samples[1], right)


def test_wav_bad_files(tmp_path):
    (tmp_path / "junk.wav").write_bytes(b"RIFFnonsense")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "junk.wav")
    wavfile.write(tmp_path / "i32.wav", 8000, np.zeros(10, dtype=np.int32))
    with pytest.raises(FormatError):
        read_wav(tmp_path / "i32.wav")


# ---------------------------------------------------------------- EEG container


def test_eeg_round_trip(tmp_path, rng):
    rec = EEGRecording(rng.standard_normal((4, 256)).astype(np.float32), 128.0, ["Fz", "Cz", "Pz", "Oz"],
                       rng.standard_normal((4, 3)))
    write_eeg(tmp_path / "e.bin", rec)
    raw = (tmp_path / "e.bin").read_bytes()
    assert len(raw) % 128 == 0 and len(raw) - 4096 > 0
    back = read_eeg(tmp_path / "e.bin")
    assert back.data.shape == (4, 256) and back.channel_names == rec.channel_names and back.fs == 128.0
    np.testing.assert_array_equal(back.data, rec.data)
    np.testing.assert_array_equal(back.positions, rec.positions)


def test_eeg_header_and_payload_size(tmp_path):
    write_eeg(tmp_path / "e.bin", EEGRecording(np.zeros((4, 256)), 128.0))
    raw = (tmp_path / "e.bin").read_bytes()
    size = int(raw.split(b"\n", 1)[0].split()[1])
    assert size % 128 == 0 and len(raw) - size == 4096
    header = json.loads(raw[raw.index(b"\n") + 1:size])
    assert header["n_samples"] == 256 and len(header["channels"]) == 4


def test_eeg_truncated_and_bad_magic(tmp_path):
    write_eeg(tmp_path / "e.bin", EEGRecording(np.zeros((4, 256)), 128.0))
    raw = (tmp_path / "e.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-7])
    with pytest.raises(FormatError):
        read_eeg(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        read_eeg(tmp_path / "m.bin")


# ---------------------------------------------------------------- synthesis


def test_synth_deterministic():
    a, b = synth_scene(11), synth_scene(11)
    for name in ("mixture", "target", "interferer"):
        np.testing.assert_array_equal(getattr(a, name).samples, getattr(b, name).samples)
    np.testing.assert_array_equal(a.eeg.data, b.eeg.data)
    assert a.attended_ear == b.attended_ear
    assert not np.array_equal(a.target.samples, synth_scene(12).target.samples)


@pytest.mark.parametrize("sir", [-5.0, 0.0, 7.5])
def test_synth_sir_and_additivity(sir):
    s = synth_scene(3, SynthConfig(sir_db=sir))
    measured = 10 * np.log10(np.sum(s.target.samples ** 2) / np.sum(s.interferer.samples ** 2))
    assert abs(measured - sir) <= 0.1
    assert np.max(np.abs(s.mixture.samples - s.target.samples - s.interferer.samples)) < 1e-9
    assert np.max(np.abs(s.mixture.samples)) == pytest.approx(0.9)


def test_synth_eeg_tracks_target_envelope():
    cfg = SynthConfig(eeg_snr_db=10)
    for seed in range(4):
        s = synth_scene(seed, cfg)
        env = dsp.resample(dsp.envelope(s.target.samples, cfg.fs_audio), cfg.fs_audio, cfg.fs_eeg)
        r = np.corrcoef(s.eeg.data.mean(axis=0), env[:s.eeg.data.shape[1]])[0, 1]
        assert r >= 0.6


def test_synth_shapes_and_validation():
    s = synth_scene(0, SynthConfig(duration=1.5, n_electrodes=5))
    assert s.eeg.data.shape == (5, 192)
    assert s.eeg.duration == pytest.approx(s.mixture.duration)
    assert s.attended_ear in ("left", "right")
    with pytest.raises(ConfigError):
        synth_scene(0, SynthConfig(duration=0.5))
    with pytest.raises(ConfigError):
        synth_scene(0, SynthConfig(n_electrodes=1))


# ---------------------------------------------------------------- splits and datasets


def test_make_splits_fractions():
    m = make_splits([f"s{i}" for i in range(16)], seed=7)
    assert (len(m.train), len(m.validation), len(m.test)) == (12, 2, 2)
    assert sorted(m.train + m.validation + m.test) == sorted(f"s{i}" for i in range(16))
    assert make_splits([f"s{i}" for i in range(16)], seed=7) == m
    all_train = make_splits(["a", "b", "c"], (1, 0, 0))
    assert all_train.validation == [] and all_train.test == [] and len(all_train.train) == 3
    with pytest.raises(ConfigError):
        make_splits(["a", "b"])
    with pytest.raises(ConfigError):
        make_splits(["a", "b", "c"], (0.5, 0.5, 0.5))


def test_dataset_round_trip(tmp_path):
    cfg = SynthConfig(duration=1.0)
    manifest = write_dataset(tmp_path, 4, seed=2, cfg=cfg, fractions=(0.5, 0.25, 0.25))
    assert read_manifest(tmp_path) == manifest
    scenes = load_split(tmp_path, "train")
    assert len(scenes) == 2
    original = synth_scene(2 * 100003 + int(scenes[0].scene_id.split("_")[1]), cfg)
    np.testing.assert_array_equal(scenes[0].target.samples, original.target.samples.astype(np.float32))
    np.testing.assert_array_equal(scenes[0].eeg.data, original.eeg.data.astype(np.float32))
    with pytest.raises(ConfigError):
        load_split(tmp_path, "dev")
    with pytest.raises(FormatError):
        read_scene(tmp_path / "missing")


def test_dataset_bitwise_reproducible(tmp_path):
    write_dataset(tmp_path / "a", 3, 5, SynthConfig(duration=1.0))
    write_dataset(tmp_path / "b", 3, 5, SynthConfig(duration=1.0))
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_preprocess_eeg(rng):
    t = np.arange(512 * 4) / 512
    raw = np.stack([np.sin(2 * np.pi * 10 * t) + np.sin(2 * np.pi * 50 * t) + 3.0, rng.standard_normal(t.size)])
    out = preprocess_eeg(EEGRecording(raw, 512.0))
    assert out.fs == 128.0 and out.data.shape == (2, 512)
    np.testing.assert_allclose(out.data.mean(axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(out.data.std(axis=1), 1, atol=1e-6)
    psd, _ = dsp.eeg_band_features(out.data[:1], 128)
    assert psd[0, 2] / psd.sum() > 0.95


def test_crop_scene():
    s = synth_scene(1)
    c = crop_scene(s, 0.5, 1.0)
    assert len(c.mixture) == 8000 and c.eeg.data.shape[1] == 128
    np.testing.assert_array_equal(c.target.samples, s.target.samples[4000:12000])
    with pytest.raises(ConfigError):
        crop_scene(s, 1.5, 1.0)
