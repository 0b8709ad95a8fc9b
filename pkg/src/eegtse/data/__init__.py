from .dataset import (
    SplitManifest,
    crop_scene,
    load_split,
    make_splits,
    preprocess_eeg,
    read_manifest,
    read_scene,
    write_dataset,
    write_scene,
)
from .io import read_eeg, read_wav, write_eeg, write_wav
from .synth import Scene, SynthConfig, synth_scene

__all__ = [
    "Scene",
    "SplitManifest",
    "SynthConfig",
    "crop_scene",
    "load_split",
    "make_splits",
    "preprocess_eeg",
    "read_eeg",
    "read_manifest",
    "read_scene",
    "read_wav",
    "synth_scene",
    "write_dataset",
    "write_eeg",
    "write_scene",
    "write_wav",
]
