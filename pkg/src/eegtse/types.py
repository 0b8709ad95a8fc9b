from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Waveform:
    """Audio samples, ``T`` (mono) or ``channels x T``."""

    samples: np.ndarray
    fs: int

    @property
    def duration(self) -> float:
        return self.samples.shape[-1] / self.fs

    def __len__(self):
        return self.samples.shape[-1]


@dataclass
class EEGRecording:
    data: np.ndarray  # channels x samples
    fs: float
    channel_names: list[str] = field(default_factory=list)
    positions: np.ndarray | None = None  # channels x 3, optional montage

    def __post_init__(self):
        self.data = np.atleast_2d(self.data)
        if not self.channel_names:
            self.channel_names = [f"ch{i:02d}" for i in range(self.data.shape[0])]
        if len(self.channel_names) != self.data.shape[0]:
            raise ValueError("one channel name per EEG row required")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def duration(self) -> float:
        return self.data.shape[1] / self.fs
