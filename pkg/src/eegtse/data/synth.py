"""Synthetic two-talker scenes with surrogate attention-tracking EEG.

The talkers are pseudo-speech: a harmonic complex with a drifting pitch and
two fixed formant peaks, gated by a syllable-rate envelope. The surrogate
EEG is not physiological. Each channel is a gain times the attended
talker's envelope, plus an alpha-band rhythm and white noise. It exists so
the pipeline has an attention cue to learn from without real recordings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dsp
from ..errors import ConfigError
from ..types import EEGRecording, Waveform

LOW_F0 = (90.0, 140.0)
HIGH_F0 = (170.0, 260.0)


@dataclass
class SynthConfig:
    fs_audio: int = 8000
    fs_eeg: int = 128
    duration: float = 2.0
    n_electrodes: int = 16
    sir_db: float = 0.0
    eeg_snr_db: float = 10.0
    alpha_amplitude: float = 0.5   # relative to the envelope component's std
    peak: float = 0.9

    def validate(self):
        problems = []
        if self.duration < 1.0:
            problems.append(f"duration must be >= 1 s, got {self.duration}")
        if self.n_electrodes < 2:
            problems.append(f"n_electrodes must be >= 2, got {self.n_electrodes}")
        if self.fs_audio < 4000:
            problems.append(f"fs_audio must be >= 4000 Hz, got {self.fs_audio}")
        if self.fs_eeg < 32:
            problems.append(f"fs_eeg must be >= 32 Hz, got {self.fs_eeg}")
        if not 0 < self.peak <= 1:
            problems.append("peak must lie in (0, 1]")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class Scene:
    scene_id: str
    mixture: Waveform
    target: Waveform
    interferer: Waveform
    eeg: EEGRecording
    attended_ear: str
    seed: int

    @property
    def fs(self) -> int:
        return self.mixture.fs


def _smooth_noise(rng, n: int, fs: float, cutoff: float) -> np.ndarray:
    x = dsp.lowpass(rng.standard_normal(n), fs, cutoff)
    return x / (np.std(x) + 1e-12)


def syllable_envelope(rng, n: int, fs: float, rate: float) -> np.ndarray:
    """Raised-cosine bursts at jittered syllable onsets, with occasional pauses."""
    env = np.zeros(n)
    t = rng.uniform(0, 0.5 / rate)
    while t < n / fs:
        length = rng.uniform(0.6, 0.9) / rate
        start, stop = int(t * fs), min(int((t + length) * fs), n)
        if stop > start and rng.random() > 0.15:
            k = np.arange(stop - start)
            env[start:stop] += rng.uniform(0.4, 1.0) * np.sin(np.pi * k / (stop - start)) ** 2
        t += rng.uniform(0.8, 1.25) / rate
    return env


def pseudo_speech(rng, n: int, fs: float, f0_range: tuple) -> np.ndarray:
    """Unit-RMS harmonic complex with formant shaping and syllabic gating."""
    f0 = rng.uniform(*f0_range)
    contour = 1.0 + 0.06 * _smooth_noise(rng, n, fs, 2.0)
    phase = 2 * np.pi * np.cumsum(f0 * contour) / fs
    f1, f2 = rng.uniform(300, 800), rng.uniform(1000, 2500)
    top = min(3600.0, 0.45 * fs)
    carrier = np.zeros(n)
    for h in range(1, int(top / (1.1 * f0)) + 1):
        fh = h * f0
        amp = (np.exp(-((fh - f1) ** 2) / (2 * 250.0 ** 2))
               + 0.6 * np.exp(-((fh - f2) ** 2) / (2 * 400.0 ** 2)) + 0.05)
        carrier += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    s = carrier * syllable_envelope(rng, n, fs, rng.uniform(3.0, 6.0))
    return s / (np.sqrt(np.mean(s ** 2)) + 1e-12)


def surrogate_eeg(rng, target: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """``n_electrodes x T_eeg`` EEG tracking the target's envelope."""
    n_eeg = int(round(cfg.duration * cfg.fs_eeg))
    env = dsp.envelope(target, cfg.fs_audio, smooth_hz=8.0)
    env = dsp.resample(env, cfg.fs_audio, cfg.fs_eeg)[:n_eeg]
    env = (env - env.mean()) / (env.std() + 1e-12)
    c = cfg.n_electrodes
    gains = rng.uniform(0.5, 1.5, size=(c, 1))
    tracking = gains * env[None, :]
    t = np.arange(n_eeg) / cfg.fs_eeg
    alpha = cfg.alpha_amplitude * np.sin(2 * np.pi * rng.uniform(9.0, 11.0) * t[None, :]
                                         + rng.uniform(0, 2 * np.pi, size=(c, 1)))
    noise_std = np.sqrt(np.mean(tracking ** 2) / 10.0 ** (cfg.eeg_snr_db / 10.0))
    return tracking + alpha + noise_std * rng.standard_normal((c, n_eeg))


def synth_scene(seed: int, cfg: SynthConfig | None = None, scene_id: str | None = None) -> Scene:
    """Deterministic dichotic scene for ``seed``.

    One talker sits in a low pitch register and the other in a high one;
    which talker is in which ear, and which ear is attended, are drawn per
    scene. The mixture is scaled so the target-to-interferer energy ratio is
    exactly ``cfg.sir_db``.
    """
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    n = int(round(cfg.duration * cfg.fs_audio))
    low = pseudo_speech(rng, n, cfg.fs_audio, LOW_F0)
    high = pseudo_speech(rng, n, cfg.fs_audio, HIGH_F0)
    left, right = (low, high) if rng.random() < 0.5 else (high, low)
    attended = "left" if rng.random() < 0.5 else "right"
    target, interferer = (left, right) if attended == "left" else (right, left)
    interferer = interferer * np.sqrt(np.sum(target ** 2) / np.sum(interferer ** 2)
                                      * 10.0 ** (-cfg.sir_db / 10.0))
    scale = cfg.peak / np.max(np.abs(target + interferer))
    target, interferer = target * scale, interferer * scale
    mixture = target + interferer
    eeg = surrogate_eeg(rng, target, cfg)
    return Scene(
        scene_id=scene_id or f"scene_{seed:06d}",
        mixture=Waveform(mixture, cfg.fs_audio),
        target=Waveform(target, cfg.fs_audio),
        interferer=Waveform(interferer, cfg.fs_audio),
        eeg=EEGRecording(eeg, float(cfg.fs_eeg)),
        attended_ear=attended,
        seed=seed,
    )
