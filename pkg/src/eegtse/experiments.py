"""Reusable experiment drivers for scripts/ and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .codec import CodecConfig
from .data import SynthConfig, synth_scene
from .eeg_encoder import EEGEncoderConfig
from .extractor import SeparatorConfig
from .model import ModelConfig
from .training import TrainConfig, mean_si_sdri, prepare, train


def tiny_model_config(seed: int = 0) -> ModelConfig:
    """C=32, C_EEG=16, R=2."""
    return ModelConfig(codec=CodecConfig(channels=32), eeg=EEGEncoderConfig(out_channels=16),
                       separator=SeparatorConfig(R=2), seed=seed)


@dataclass
class ProbeResult:
    si_sdri: float
    loss_trace: list[float]
    seconds: float
    steps: int


def overfit_probe(n_scenes: int = 4, steps: int = 500, lr: float = 2e-3, seed: int = 0) -> ProbeResult:
    """Fit the tiny model to a handful of fixed 2 s scenes and report train SI-SDRi.

    The learning rate is held constant (no decay within the probe) and each
    epoch is one pass over the scenes at batch size 1.
    """
    scenes = [synth_scene(seed * 1000 + i, SynthConfig(duration=2.0, fs_audio=8000)) for i in range(n_scenes)]
    cfg = TrainConfig(epochs=-(-steps // n_scenes), lr=lr, decay_every=10 ** 6, max_steps=steps, seed=seed)
    start = time.perf_counter()
    result = train(scenes, [], tiny_model_config(seed), cfg)
    seconds = time.perf_counter() - start
    # score the final weights, which are what the loss trace ends on
    sdri = mean_si_sdri(result.model, [prepare(s) for s in scenes])
    return ProbeResult(sdri, result.loss_trace, seconds, len(result.loss_trace))


def smoothed_windows(trace, window: int = 50, start: int = 100) -> np.ndarray:
    """Mean loss over consecutive ``window``-step blocks after ``start``."""
    x = np.asarray(trace[start:], dtype=np.float64)
    n = len(x) // window
    return x[:n * window].reshape(n, window).mean(axis=1)
