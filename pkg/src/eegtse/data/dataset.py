"""Scene storage on disk and train/validation/test splitting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import dsp
from ..errors import ConfigError, FormatError
from ..types import EEGRecording, Waveform
from .io import read_eeg, read_wav, write_eeg, write_wav
from .synth import Scene, SynthConfig, synth_scene

DEFAULT_FRACTIONS = (0.75, 0.125, 0.125)
SPLITS = ("train", "validation", "test")
MANIFEST = "manifest.json"


@dataclass
class SplitManifest:
    train: list[str]
    validation: list[str]
    test: list[str]
    fractions: tuple = DEFAULT_FRACTIONS
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def split(self, name: str) -> list[str]:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}; choose from {SPLITS}")
        return getattr(self, name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SplitManifest:
        return cls(train=list(d["train"]), validation=list(d["validation"]), test=list(d["test"]),
                   fractions=tuple(d.get("fractions", DEFAULT_FRACTIONS)), seed=int(d.get("seed", 0)),
                   extra=dict(d.get("extra", {})))


def make_splits(scene_ids, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> SplitManifest:
    """Seeded shuffle, then contiguous train/validation/test blocks."""
    ids = list(scene_ids)
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    if len(set(ids)) != len(ids):
        raise ConfigError("scene ids must be unique")
    if len(ids) < int(np.count_nonzero(fr)):
        raise ConfigError(f"{len(ids)} scenes cannot fill {np.count_nonzero(fr)} non-empty splits")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = int(round(fr[0] * len(ids)))
    n_val = int(round(fr[1] * len(ids)))
    if fr[2] == 0:
        n_val = len(ids) - n_train
    n_val = min(n_val, len(ids) - n_train)
    cut = n_train + n_val
    return SplitManifest(shuffled[:n_train], shuffled[n_train:cut], shuffled[cut:],
                         tuple(float(f) for f in fractions), seed)


# ---------------------------------------------------------------- scene files


def write_scene(directory, scene: Scene):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_wav(d / "mixture.wav", scene.mixture)
    write_wav(d / "target.wav", scene.target)
    write_wav(d / "interferer.wav", scene.interferer)
    write_eeg(d / "eeg.bin", scene.eeg)
    meta = {"scene_id": scene.scene_id, "attended_ear": scene.attended_ear, "seed": scene.seed}
    (d / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_scene(directory) -> Scene:
    d = Path(directory)
    try:
        meta = json.loads((d / "scene.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{d}: missing scene.json") from None
    mixture = read_wav(d / "mixture.wav")
    target = read_wav(d / "target.wav")
    interferer = read_wav(d / "interferer.wav")
    eeg = read_eeg(d / "eeg.bin")
    if not (len(mixture) == len(target) == len(interferer)):
        raise FormatError(f"{d}: waveform lengths differ")
    return Scene(meta["scene_id"], mixture, target, interferer, eeg, meta["attended_ear"], int(meta["seed"]))


def write_dataset(root, n_scenes: int, seed: int, cfg: SynthConfig,
                  fractions=DEFAULT_FRACTIONS) -> SplitManifest:
    """Generate ``n_scenes`` scenes under ``root`` plus ``manifest.json``.

    Scene ``i`` uses seed ``seed * 100003 + i`` so datasets with different
    seeds do not share scenes.
    """
    if n_scenes < 1:
        raise ConfigError("n_scenes must be >= 1")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(n_scenes):
        scene_id = f"scene_{i:04d}"
        write_scene(root / scene_id, synth_scene(seed * 100003 + i, cfg, scene_id))
        ids.append(scene_id)
    manifest = make_splits(ids, fractions, seed)
    manifest.extra = {"synth": asdict(cfg)}
    (root / MANIFEST).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(root) -> SplitManifest:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    return SplitManifest.from_dict(json.loads(path.read_text()))


def load_split(root, split: str) -> list[Scene]:
    manifest = read_manifest(root)
    return [read_scene(Path(root) / sid) for sid in manifest.split(split)]


# ---------------------------------------------------------------- preprocessing


def preprocess_eeg(rec: EEGRecording, target_fs: float = 128.0, notch_hz: float | None = 50.0) -> EEGRecording:
    """Notch (when representable), 0.1-45 Hz band-pass, resample, per-channel z-score."""
    x = np.asarray(rec.data, dtype=np.float64)
    fs = rec.fs
    if notch_hz is not None and notch_hz < fs / 2:
        x = dsp.notch(x, fs, notch_hz)
    if fs > 90.0:
        x = dsp.bandpass(x, fs, 0.1, 45.0)
    if fs != target_fs:
        x = dsp.resample(x, fs, target_fs)
    x = (x - x.mean(axis=1, keepdims=True)) / (x.std(axis=1, keepdims=True) + 1e-8)
    return EEGRecording(x, target_fs, list(rec.channel_names), rec.positions)


def crop_scene(scene: Scene, start_s: float, duration_s: float) -> Scene:
    """Time-aligned crop of audio and EEG."""
    fs, fe = scene.fs, scene.eeg.fs
    a0, a1 = int(round(start_s * fs)), int(round((start_s + duration_s) * fs))
    e0, e1 = int(round(start_s * fe)), int(round((start_s + duration_s) * fe))
    if a1 > len(scene.mixture) or e1 > scene.eeg.data.shape[1]:
        raise ConfigError("crop extends past the end of the scene")

    def cut(w: Waveform) -> Waveform:
        return Waveform(w.samples[..., a0:a1], w.fs)

    eeg = EEGRecording(scene.eeg.data[:, e0:e1], fe, list(scene.eeg.channel_names), scene.eeg.positions)
    return Scene(scene.scene_id, cut(scene.mixture), cut(scene.target), cut(scene.interferer), eeg,
                 scene.attended_ear, scene.seed)
