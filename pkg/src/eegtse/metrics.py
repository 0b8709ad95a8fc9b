"""SI-SDR (metric and differentiable loss) and intelligibility metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dsp
from .errors import LengthError, ShapeError
from .nn import Tensor, as_tensor
from .nn import functional as F

SI_SDR_CAP_DB = 60.0


class UndefinedReferenceError(ValueError):
    """SI-SDR is undefined for an all-zero reference."""


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +60 dB for exact reconstructions."""
    est = np.asarray(estimate, dtype=np.float64).reshape(-1)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise ShapeError(f"estimate has {est.size} samples, reference {ref.size}")
    ref_energy = ref @ ref
    if ref_energy == 0.0:
        raise UndefinedReferenceError("reference signal is all zeros")
    target = (est @ ref / ref_energy) * ref
    residual = target - est
    num, den = target @ target, residual @ residual
    if den <= num * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    return float(10.0 * np.log10(num / den))


def si_sdr_loss(estimate, reference, eps: float = 1e-8) -> Tensor:
    """Negative SI-SDR averaged over the batch; differentiable in ``estimate``.

    ``estimate`` and ``reference`` are ``B x ... x T`` or a single ``T`` vector. The small ``eps`` keeps
    the log finite at exact reconstruction; there is no cap.
    """
    est = as_tensor(estimate)
    ref = np.asarray(reference.data if isinstance(reference, Tensor) else reference, dtype=est.dtype)
    if est.ndim == 1:
        # a bare waveform is a batch of one
        est, ref = F.reshape(est, (1, -1)), ref.reshape(1, -1)
    if est.shape != ref.shape:
        raise ShapeError(f"estimate {est.shape} vs reference {ref.shape}")
    b = est.shape[0]
    est = F.reshape(est, (b, -1))
    ref = ref.reshape(b, -1)
    ref_energy = (ref * ref).sum(axis=1, keepdims=True)
    if np.any(ref_energy == 0):
        raise UndefinedReferenceError("reference signal is all zeros")
    alpha = F.div(F.sum(F.mul(est, ref), axis=1, keepdims=True), ref_energy)
    target = F.mul(alpha, ref)
    residual = F.sub(target, est)
    num = F.add(F.sum(F.mul(target, target), axis=1), eps)
    den = F.add(F.sum(F.mul(residual, residual), axis=1), eps)
    ratio_db = F.mul(F.log(F.div(num, den)), 10.0 / np.log(10.0))
    return F.mul(F.mean(ratio_db), -1.0)


# ---------------------------------------------------------------- STOI / ESTOI

STOI_FS = 10_000
_FRAME = 256
_NFFT = 512
_BANDS = 15
_MIN_FREQ = 150.0
_SEGMENT = 30
_BETA_DB = -15.0
_DYN_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps


def third_octave_matrix(fs: int = STOI_FS, nfft: int = _NFFT, n_bands: int = _BANDS,
                        min_freq: float = _MIN_FREQ) -> np.ndarray:
    """``n_bands x (nfft/2+1)`` 0/1 matrix grouping FFT bins into third-octave bands."""
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, len(freqs)))
    for i in range(n_bands):
        a = int(np.argmin(np.abs(freqs - lo[i])))
        b = int(np.argmin(np.abs(freqs - hi[i])))
        obm[i, a:b] = 1.0
    return obm


def _analysis_window(n: int = _FRAME) -> np.ndarray:
    return np.hanning(n + 2)[1:-1]


def _frame_starts(n: int, hop: int) -> np.ndarray:
    # the reference implementation never uses the final full frame
    return np.arange(0, n - _FRAME, hop)


def _drop_silent_frames(x: np.ndarray, y: np.ndarray):
    """Remove frames of the clean signal more than 40 dB below its loudest
    frame (and the matching frames of the processed one), then overlap-add."""
    w = _analysis_window()
    hop = _FRAME // 2
    starts = _frame_starts(len(x), hop)
    xf = np.stack([w * x[s:s + _FRAME] for s in starts])
    yf = np.stack([w * y[s:s + _FRAME] for s in starts])
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - _DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    n = (len(xf) - 1) * hop + _FRAME
    xs, ys = np.zeros(n), np.zeros(n)
    for i in range(len(xf)):
        xs[i * hop:i * hop + _FRAME] += xf[i]
        ys[i * hop:i * hop + _FRAME] += yf[i]
    return xs, ys


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    """Third-octave band magnitudes, ``bands x frames``."""
    w = _analysis_window()
    hop = _FRAME // 2
    starts = _frame_starts(len(x), hop)
    frames = np.stack([w * x[s:s + _FRAME] for s in starts])
    spec = np.fft.rfft(frames, n=_NFFT, axis=1).T
    return np.sqrt(third_octave_matrix() @ np.abs(spec) ** 2)


def _segments(tob: np.ndarray) -> np.ndarray:
    """Sliding ``bands x 30`` windows: ``n_seg x bands x 30``."""
    return np.lib.stride_tricks.sliding_window_view(tob, _SEGMENT, axis=1).transpose(1, 0, 2)


def _prepare(estimate, reference, fs):
    x = np.asarray(reference, dtype=np.float64).reshape(-1)
    y = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeError(f"estimate has {y.size} samples, reference {x.size}")
    if fs != STOI_FS:
        x = dsp.resample(x, fs, STOI_FS)
        y = dsp.resample(y, fs, STOI_FS)
    if len(x) < _FRAME:
        raise LengthError("signal shorter than one STOI analysis frame")
    x, y = _drop_silent_frames(x, y)
    xt, yt = _band_envelopes(x), _band_envelopes(y)
    if xt.shape[1] < _SEGMENT:
        raise LengthError(f"only {xt.shape[1]} non-silent frames; STOI needs at least {_SEGMENT} (~384 ms)")
    return _segments(xt), _segments(yt)


def stoi(estimate, reference, fs: int) -> float:
    """Short-time objective intelligibility of ``estimate`` against ``reference``.

    Signals are resampled to 10 kHz. The raw value lies in [-1, 1].
    """
    xs, ys = _prepare(estimate, reference, fs)
    # scale each processed segment to the clean segment's energy, then clip
    # to bound its signal-to-distortion ratio at -15 dB
    gain = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    clip = 10 ** (-_BETA_DB / 20)
    yp = np.minimum(ys * gain, xs * (1 + clip))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + _EPS
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + _EPS
    return float(np.mean(np.sum(xc * yp, axis=2)))


def _row_col_normalize(seg: np.ndarray) -> np.ndarray:
    seg = seg - seg.mean(axis=2, keepdims=True)
    seg = seg / (np.linalg.norm(seg, axis=2, keepdims=True) + _EPS)
    seg = seg - seg.mean(axis=1, keepdims=True)
    return seg / (np.linalg.norm(seg, axis=1, keepdims=True) + _EPS)


def estoi(estimate, reference, fs: int) -> float:
    """Extended STOI: correlation of spectral vectors after normalizing each
    segment along time and then along frequency."""
    xs, ys = _prepare(estimate, reference, fs)
    xn, yn = _row_col_normalize(xs), _row_col_normalize(ys)
    return float(np.sum(xn * yn) / (_SEGMENT * xn.shape[0]))


# ---------------------------------------------------------------- reports


@dataclass
class SceneMetrics:
    scene_id: str
    si_sdr: float
    si_sdr_improvement: float
    stoi: float
    estoi: float


@dataclass
class MetricReport:
    """Per-scene rows for one system plus their aggregate."""

    system: str
    scenes: list[SceneMetrics] = field(default_factory=list)

    COLUMNS = ("si_sdr", "si_sdr_improvement", "stoi", "estoi")

    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for col in self.COLUMNS:
            vals = np.array([getattr(s, col) for s in self.scenes], dtype=np.float64)
            out[col] = {"mean": float(vals.mean()) if vals.size else float("nan"),
                        "std": float(vals.std()) if vals.size else float("nan")}
        return out

    def to_dict(self) -> dict:
        return {"system": self.system,
                "scenes": [asdict(s) for s in self.scenes],
                "aggregate": self.aggregate()}


def clamp_unit(value: float) -> float:
    return float(min(max(value, 0.0), 1.0))


def score_scene(scene_id: str, estimate, target, mixture, fs: int) -> SceneMetrics:
    """Metrics for one estimate; STOI/ESTOI are clamped to [0, 1]."""
    value = si_sdr(estimate, target)
    return SceneMetrics(scene_id=scene_id, si_sdr=value,
                        si_sdr_improvement=value - si_sdr(mixture, target),
                        stoi=clamp_unit(stoi(estimate, target, fs)),
                        estoi=clamp_unit(estoi(estimate, target, fs)))


def write_reports(path, reports: list[MetricReport]):
    payload = {"reports": [r.to_dict() for r in reports]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_table(reports: list[MetricReport]) -> str:
    header = f"{'system':<24}" + "".join(f"{c:>22}" for c in MetricReport.COLUMNS)
    lines = [header, "-" * len(header)]
    for r in reports:
        agg = r.aggregate()
        lines.append(f"{r.system:<24}" + "".join(
            f"{agg[c]['mean']:>13.3f} ± {agg[c]['std']:<6.3f}" for c in MetricReport.COLUMNS))
    return "\n".join(lines)
