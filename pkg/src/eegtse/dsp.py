"""Non-learned signal processing: STFT, EEG band features, filtering,
resampling and amplitude envelopes.

Every function works on the last axis, so multichannel arrays
(``channels x samples``) are handled without loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import ConfigError, LengthError


@dataclass(frozen=True)
class BandDef:
    name: str
    lo: float
    hi: float


CANONICAL_BANDS = (
    BandDef("delta", 0.0, 4.0),
    BandDef("theta", 4.0, 8.0),
    BandDef("alpha", 8.0, 12.0),
    BandDef("beta", 12.0, 30.0),
    BandDef("gamma", 30.0, 50.0),
)

DE_FLOOR = 1e-10


@dataclass
class Spectrogram:
    values: np.ndarray  # ... x frames x bins, complex
    window: np.ndarray
    hop: int
    fs: float

    @property
    def window_len(self) -> int:
        return len(self.window)

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.rfftfreq(self.window_len, d=1.0 / self.fs)

    @property
    def n_frames(self) -> int:
        return self.values.shape[-2]


def frame_signal(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """``... x T`` -> ``... x frames x window_len`` (no padding, trailing remainder dropped)."""
    x = np.asarray(x)
    if hop < 1:
        raise ConfigError("hop must be >= 1")
    if x.shape[-1] < window_len:
        raise LengthError(f"signal of {x.shape[-1]} samples is shorter than one {window_len}-sample window")
    return np.lib.stride_tricks.sliding_window_view(x, window_len, axis=-1)[..., ::hop, :]


def stft(x: np.ndarray, fs: float, window_len: int, hop: int) -> Spectrogram:
    """Hann-windowed short-time Fourier transform.

    The window is the symmetric Hann, so reversing a frame in time leaves
    its magnitude spectrum unchanged.
    """
    window = signal.get_window("hann", window_len, fftbins=False)
    frames = frame_signal(x, window_len, hop) * window
    return Spectrogram(np.fft.rfft(frames, axis=-1), window, hop, fs)


def power_spectral_density(spec: Spectrogram) -> np.ndarray:
    """One-sided PSD per frame (units^2/Hz), ``... x frames x bins``."""
    n = spec.window_len
    psd = np.abs(spec.values) ** 2 / (spec.fs * np.sum(spec.window ** 2))
    psd[..., 1:(n + 1) // 2] *= 2.0
    return psd


def band_power(spec: Spectrogram, bands=CANONICAL_BANDS) -> np.ndarray:
    """Power in each band, averaged over frames: ``... x len(bands)``.

    Band power is the PSD integrated over the bins with ``lo <= f < hi``
    (mean PSD in the band times the band width), so it is additive over
    disjoint bands.
    """
    freqs = spec.freqs
    if spec.fs < 2 * max(b.hi for b in bands):
        raise ConfigError(f"fs={spec.fs} Hz cannot represent bands up to {max(b.hi for b in bands)} Hz")
    df = spec.fs / spec.window_len
    psd = power_spectral_density(spec).mean(axis=-2)
    out = []
    for band in bands:
        sel = (freqs >= band.lo) & (freqs < band.hi)
        if not sel.any():
            raise ConfigError(f"band {band.name} ({band.lo}-{band.hi} Hz) contains no STFT bins")
        out.append(psd[..., sel].sum(axis=-1) * df)
    return np.stack(out, axis=-1)


def total_power(spec: Spectrogram, lo: float, hi: float) -> np.ndarray:
    freqs = spec.freqs
    sel = (freqs >= lo) & (freqs < hi)
    return power_spectral_density(spec).mean(axis=-2)[..., sel].sum(axis=-1) * spec.fs / spec.window_len


def differential_entropy(power: np.ndarray, floor: float = DE_FLOOR) -> np.ndarray:
    """Gaussian differential entropy of a band with variance ``power``."""
    return 0.5 * np.log(2.0 * np.pi * np.e * np.maximum(np.asarray(power, dtype=np.float64), floor))


def eeg_band_features(eeg: np.ndarray, fs: float, bands=CANONICAL_BANDS) -> tuple[np.ndarray, np.ndarray]:
    """PSD and DE band features for ``channels x samples`` EEG.

    One-second Hann windows with 50% overlap; the frame average removes the
    time axis. Returns ``(psd, de)``, each ``channels x len(bands)``.
    """
    window_len = int(round(fs))
    spec = stft(eeg, fs, window_len, max(window_len // 2, 1))
    psd = band_power(spec, bands)
    return psd, differential_entropy(psd)


# ---------------------------------------------------------------- filtering


def _check_stable(sos: np.ndarray, what: str):
    poles = np.concatenate([np.roots(section[3:]) for section in sos])
    if not np.all(np.isfinite(poles)) or np.any(np.abs(poles) >= 1.0):
        raise ConfigError(f"{what}: unstable filter coefficients")


def zero_phase(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Forward-backward filtering, symmetrized so that filtering a
    time-reversed signal gives exactly the time-reversed output."""
    x = np.asarray(x, dtype=np.float64)
    padlen = min(3 * (2 * len(sos) + 1), x.shape[-1] - 1)
    fwd = signal.sosfiltfilt(sos, x, axis=-1, padlen=padlen)
    bwd = signal.sosfiltfilt(sos, x[..., ::-1], axis=-1, padlen=padlen)[..., ::-1]
    return 0.5 * (fwd + bwd)


def bandpass(x: np.ndarray, fs: float, lo: float = 0.1, hi: float = 45.0, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass."""
    if not 0 < lo < hi:
        raise ConfigError(f"bandpass needs 0 < lo < hi, got {lo}, {hi}")
    if fs <= 2 * hi:
        raise ConfigError(f"bandpass upper edge {hi} Hz needs fs > {2 * hi} Hz, got {fs}")
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    _check_stable(sos, "bandpass")
    return zero_phase(sos, x)


def lowpass(x: np.ndarray, fs: float, cutoff: float, order: int = 2) -> np.ndarray:
    if not 0 < cutoff < fs / 2:
        raise ConfigError(f"lowpass cutoff {cutoff} Hz must lie in (0, {fs / 2})")
    sos = signal.butter(order, cutoff, btype="lowpass", fs=fs, output="sos")
    _check_stable(sos, "lowpass")
    return zero_phase(sos, x)


def notch(x: np.ndarray, fs: float, f0: float = 50.0, q: float = 30.0) -> np.ndarray:
    """Zero-phase second-order notch at ``f0``."""
    if not 0 < f0 < fs / 2:
        raise ConfigError(f"notch frequency {f0} Hz must lie in (0, {fs / 2})")
    b, a = signal.iirnotch(f0, q, fs=fs)
    sos = signal.tf2sos(b, a)
    _check_stable(sos, "notch")
    return zero_phase(sos, x)


def resample(x: np.ndarray, fs: float, target_fs: float) -> np.ndarray:
    """Polyphase windowed-sinc resampling along the last axis.

    The output has exactly ``round(T * target_fs / fs)`` samples.
    """
    if target_fs <= 0 or fs <= 0:
        raise ConfigError("sample rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    n_out = int(round(x.shape[-1] * target_fs / fs))
    if target_fs == fs:
        return x.copy()
    ratio = Fraction(target_fs / fs).limit_denominator(10_000)
    # padtype='line' keeps constants and slow trends intact at the edges
    y = signal.resample_poly(x, ratio.numerator, ratio.denominator, axis=-1, padtype="line")
    if y.shape[-1] >= n_out:
        return y[..., :n_out]
    pad = [(0, 0)] * (y.ndim - 1) + [(0, n_out - y.shape[-1])]
    return np.pad(y, pad, mode="edge")


def envelope(x: np.ndarray, fs: float, smooth_hz: float = 8.0) -> np.ndarray:
    """Amplitude envelope: full-wave rectification then zero-phase low-pass.

    A steady sine of amplitude ``A`` yields ``2A/pi``.
    """
    if not 0 < smooth_hz < fs / 2:
        raise ConfigError(f"envelope smoothing {smooth_hz} Hz must lie in (0, {fs / 2})")
    return np.maximum(lowpass(np.abs(x), fs, smooth_hz), 0.0)
