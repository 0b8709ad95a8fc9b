"""WAV and EEG container I/O."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from ..errors import FormatError
from ..types import EEGRecording, Waveform

EEG_MAGIC = b"EEGTSE-EEG"
EEG_ALIGN = 128


def read_wav(path) -> Waveform:
    """Read PCM-16 or float32 WAV; samples come back as float in [-1, 1].

    Stereo files give a ``2 x T`` array, one row per channel.
    """
    try:
        fs, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype} (need PCM-16 or float32)")
    if samples.ndim == 2:
        samples = np.ascontiguousarray(samples.T)
    return Waveform(samples, int(fs))


def write_wav(path, wav: Waveform, pcm16: bool = False):
    """Write float32 (default, lossless for float32 input) or PCM-16 WAV."""
    samples = np.asarray(wav.samples)
    if samples.ndim == 2:
        samples = samples.T
    if pcm16:
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = samples.astype(np.float32)
    wavfile.write(path, int(wav.fs), data)


def write_eeg(path, rec: EEGRecording):
    """EEG container: a magic line, a JSON header padded to a multiple of
    128 bytes, then little-endian float32 samples, channel-major."""
    data = np.asarray(rec.data, dtype="<f4")
    header = {
        "channels": list(rec.channel_names),
        "fs": float(rec.fs),
        "n_samples": int(data.shape[1]),
        "dtype": "<f4",
        "layout": "channel-major",
    }
    if rec.positions is not None:
        header["positions"] = np.asarray(rec.positions, dtype=float).tolist()
    body = json.dumps(header, sort_keys=True).encode()
    size = len(EEG_MAGIC) + 1 + 10 + 1 + len(body) + 1
    size = -(-size // EEG_ALIGN) * EEG_ALIGN
    first = EEG_MAGIC + b" " + f"{size:010d}".encode() + b"\n"
    pad = size - len(first) - len(body) - 1
    with open(path, "wb") as fh:
        fh.write(first + body + b" " * pad + b"\n")
        fh.write(np.ascontiguousarray(data).tobytes())


def read_eeg(path) -> EEGRecording:
    raw = Path(path).read_bytes()
    first, _, _ = raw[:64].partition(b"\n")
    parts = first.split()
    if len(parts) != 2 or parts[0] != EEG_MAGIC or not parts[1].isdigit():
        raise FormatError(f"{path}: not an EEG container (bad magic line)")
    size = int(parts[1])
    if size % EEG_ALIGN or size > len(raw):
        raise FormatError(f"{path}: header length {size} is invalid")
    try:
        header = json.loads(raw[len(first) + 1:size].decode())
        names = list(header["channels"])
        fs = float(header["fs"])
        n = int(header["n_samples"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if header.get("dtype", "<f4") != "<f4":
        raise FormatError(f"{path}: unsupported payload dtype {header['dtype']}")
    payload = raw[size:]
    expected = 4 * len(names) * n
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(len(names), n).copy()
    positions = np.array(header["positions"]) if "positions" in header else None
    return EEGRecording(data, fs, names, positions)
