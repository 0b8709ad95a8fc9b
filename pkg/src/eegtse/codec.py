"""Learned time-domain speech encoder and its overlap-add decoder."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, LengthError, ShapeError
from .nn import ParamRegistry, Tensor, as_tensor
from .nn import functional as F


@dataclass
class CodecConfig:
    kernel_len: int = 20
    channels: int = 128

    def __post_init__(self):
        if self.kernel_len < 2 or self.kernel_len % 2:
            raise ConfigError(f"kernel_len must be even and >= 2, got {self.kernel_len}")
        if self.channels < 1:
            raise ConfigError("channels must be positive")

    @property
    def stride(self) -> int:
        return self.kernel_len // 2

    def n_frames(self, n_samples: int) -> int:
        """Frames produced for ``n_samples`` of input (after right padding)."""
        return (padded_length(n_samples, self) - self.kernel_len) // self.stride + 1

    def n_samples(self, n_frames: int) -> int:
        return (n_frames - 1) * self.stride + self.kernel_len


def padded_length(n_samples: int, cfg: CodecConfig) -> int:
    """Smallest length >= n_samples with ``(T - K) % stride == 0``."""
    if n_samples < cfg.kernel_len:
        raise LengthError(f"input of {n_samples} samples is shorter than the {cfg.kernel_len}-sample kernel")
    extra = (n_samples - cfg.kernel_len) % cfg.stride
    return n_samples + (cfg.stride - extra) % cfg.stride


def encode_speech(x, weight: Tensor, cfg: CodecConfig) -> Tensor:
    """``B x 1 x T`` (or ``B x T``) waveform -> nonnegative ``B x C x S`` embedding.

    Ragged lengths are right-padded with zeros up to the next whole frame.
    """
    x = as_tensor(x)
    if x.ndim == 2:
        x = F.reshape(x, (x.shape[0], 1, x.shape[1]))
    if x.ndim != 3 or x.shape[1] != 1:
        raise ShapeError(f"encoder expects B x 1 x T input, got {x.shape}")
    n = x.shape[-1]
    target = padded_length(n, cfg)
    if target != n:
        x = F.pad_axis(x, 2, 0, target - n)
    return F.relu(F.conv1d(x, weight, stride=cfg.stride))


def decode_speech(emb, weight: Tensor, cfg: CodecConfig, length: int | None = None) -> Tensor:
    """Overlap-add ``B x C x S`` back to ``B x 1 x T``; optionally trim to ``length``."""
    emb = as_tensor(emb)
    if emb.ndim != 3 or emb.shape[1] != cfg.channels:
        raise ShapeError(f"decoder expects B x {cfg.channels} x S, got {emb.shape}")
    out = F.conv1d_transpose(emb, weight, stride=cfg.stride)
    if length is not None and length != out.shape[-1]:
        if length > out.shape[-1]:
            raise LengthError(f"cannot trim {out.shape[-1]} decoded samples to {length}")
        out = F.slice_axis(out, 2, 0, length)
    return out


class SpeechEncoder:
    def __init__(self, reg: ParamRegistry, cfg: CodecConfig, prefix: str = "encoder"):
        self.cfg = cfg
        self.weight = reg.uniform(f"{prefix}.weight", (cfg.channels, 1, cfg.kernel_len), cfg.kernel_len)

    def __call__(self, x) -> Tensor:
        return encode_speech(x, self.weight, self.cfg)


class SpeechDecoder:
    def __init__(self, reg: ParamRegistry, cfg: CodecConfig, prefix: str = "decoder"):
        self.cfg = cfg
        self.weight = reg.uniform(f"{prefix}.weight", (cfg.channels, 1, cfg.kernel_len), cfg.channels)

    def __call__(self, emb, length: int | None = None) -> Tensor:
        return decode_speech(emb, self.weight, self.cfg, length)
