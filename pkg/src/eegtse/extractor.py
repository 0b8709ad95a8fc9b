"""Speech/EEG fusion and the mask-estimating separator.

The separator stacks ``R`` pairs of a gated attention block (chunked local
softmax attention plus global linear attention) and an RNN-free recurrent
block (gated dilated FSMN), then emits a nonnegative mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigError, ShapeError
from .nn import ParamRegistry, Tensor, as_tensor
from .nn import functional as F


@dataclass
class SeparatorConfig:
    R: int = 6
    chunk_size: int = 64
    heads: int = 1
    fsmn_taps: int = 8
    fsmn_dilations: tuple = (1, 2, 4, 8)
    mask_activation: str = "relu"

    def __post_init__(self):
        self.fsmn_dilations = tuple(int(d) for d in self.fsmn_dilations)
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if self.fsmn_taps < 1:
            raise ConfigError("fsmn_taps must be >= 1")
        d = self.fsmn_dilations
        if not d or d[0] < 1 or any(a >= b for a, b in zip(d, d[1:])):
            raise ConfigError(f"fsmn_dilations must be positive and strictly increasing, got {d}")
        if self.mask_activation != "relu":
            raise ConfigError(f"unsupported mask activation {self.mask_activation!r}")

    def fsmn_receptive_field(self) -> int:
        return sum(d * (self.fsmn_taps - 1) for d in self.fsmn_dilations) + 1


@dataclass
class BlockActivations:
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    av: np.ndarray
    au: np.ndarray
    gate: np.ndarray
    out: np.ndarray
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------- fusion and masking


def fuse(speech: Tensor, eeg: Tensor, weight: Tensor) -> Tensor:
    """Channel-concatenate ``B x C x D`` speech and ``B x C_eeg x D`` EEG
    embeddings and mix them back to ``C`` channels with a 1x1 convolution."""
    speech, eeg = as_tensor(speech), as_tensor(eeg)
    if speech.shape[0] != eeg.shape[0]:
        raise ShapeError(f"batch mismatch: speech {speech.shape[0]} vs EEG {eeg.shape[0]}")
    if speech.shape[-1] != eeg.shape[-1]:
        raise AlignmentError(f"speech has {speech.shape[-1]} frames but EEG embedding has {eeg.shape[-1]}")
    return F.pointwise_conv(F.concat([speech, eeg], axis=1), weight)


def apply_mask(x: Tensor, mask: Tensor) -> Tensor:
    x, mask = as_tensor(x), as_tensor(mask)
    if x.shape != mask.shape:
        raise ShapeError(f"mask {mask.shape} does not match embedding {x.shape}")
    return F.mul(x, mask)


# ---------------------------------------------------------------- attention


def chunked_attention(q: Tensor, k: Tensor, v: Tensor, chunk: int) -> Tensor:
    """Full softmax attention restricted to non-overlapping chunks along the
    sequence axis (``... x L x d``); the tail chunk is zero-padded and its
    padded keys are masked out."""
    n = q.shape[-2]
    chunk = min(chunk, n)
    n_chunks = -(-n // chunk)
    pad = n_chunks * chunk - n
    lead = q.shape[:-2]

    def blocks(t: Tensor) -> Tensor:
        if pad:
            t = F.pad_axis(t, -2, 0, pad)
        return F.reshape(t, (*lead, n_chunks, chunk, t.shape[-1]))

    mask = None
    if pad:
        mask = (np.arange(n_chunks * chunk) < n).reshape(n_chunks, 1, chunk)
    out = F.softmax_attention(blocks(q), blocks(k), blocks(v), mask=mask)
    out = F.reshape(out, (*lead, n_chunks * chunk, v.shape[-1]))
    return F.slice_axis(out, -2, 0, n) if pad else out


def mixed_attention(q: Tensor, k: Tensor, v: Tensor, chunk: int) -> Tensor:
    """Chunk-local softmax attention plus global linear attention."""
    return F.add(chunked_attention(q, k, v, chunk), F.linear_attention(q, k, v))


class MossFormerBlock:
    """Gated attention unit: ``O = X + ConvM(sigmoid(U * A(V) * A(U)))``.

    ``U``, ``V``, queries and keys are 1x1 projections of the block input.
    One attention map ``A`` acts on both ``V`` and ``U``.
    """

    def __init__(self, reg: ParamRegistry, name: str, channels: int, cfg: SeparatorConfig):
        if channels % cfg.heads:
            raise ConfigError(f"heads={cfg.heads} must divide channels={channels}")
        self.cfg = cfg
        self.wu, self.wv, self.wq, self.wk = (reg.uniform(f"{name}.{p}", (channels, channels), channels)
                                              for p in ("wu", "wv", "wq", "wk"))
        self.wm = reg.uniform(f"{name}.conv_m", (channels, channels), channels)

    def _heads(self, t: Tensor) -> Tensor:
        b, c, d = t.shape
        h = self.cfg.heads
        return F.transpose(F.reshape(t, (b, h, c // h, d)), (0, 1, 3, 2))  # B,h,D,dh

    def _merge(self, t: Tensor) -> Tensor:
        b, h, d, dh = t.shape
        return F.reshape(F.transpose(t, (0, 1, 3, 2)), (b, h * dh, d))

    def attend(self, x: Tensor):
        """Return ``(U, V, A(V), A(U))`` for block input ``x``."""
        u, v = F.pointwise_conv(x, self.wu), F.pointwise_conv(x, self.wv)
        q, k = self._heads(F.pointwise_conv(x, self.wq)), self._heads(F.pointwise_conv(x, self.wk))
        # attend over V and U together: both share the same attention map
        vu = F.concat([self._heads(v), self._heads(u)], axis=-1)
        att = mixed_attention(q, k, vu, self.cfg.chunk_size)
        dh = vu.shape[-1] // 2
        av = self._merge(F.slice_axis(att, -1, 0, dh))
        au = self._merge(F.slice_axis(att, -1, dh, 2 * dh))
        return u, v, av, au

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)[0]

    def forward(self, x: Tensor):
        u, v, av, au = self.attend(x)
        gate = F.sigmoid(F.mul(F.mul(u, av), au))
        out = F.add(x, F.pointwise_conv(gate, self.wm))
        acts = BlockActivations(*(t.data for t in (x, u, v, av, au, gate, out)))
        return out, acts


class DilatedFSMN:
    """Densely connected stack of dilated depthwise memory filters.

    Stage ``j`` mixes the input and all earlier stage outputs with a 1x1
    convolution, then adds a depthwise dilated filter of its own output.
    """

    def __init__(self, reg: ParamRegistry, name: str, channels: int, taps: int, dilations: tuple):
        self.dilations = dilations
        self.mix, self.memory = [], []
        for j, _ in enumerate(dilations):
            fan = channels * (j + 1)
            self.mix.append(reg.uniform(f"{name}.stage{j}.mix", (channels, fan), fan))
            self.memory.append(reg.uniform(f"{name}.stage{j}.memory", (channels, taps), taps))

    def __call__(self, x: Tensor) -> Tensor:
        history = [x]
        for mix, memory, dilation in zip(self.mix, self.memory, self.dilations):
            inp = history[0] if len(history) == 1 else F.concat(history, axis=1)
            z = F.pointwise_conv(inp, mix)
            history.append(F.add(z, F.depthwise_conv1d(z, memory, dilation=dilation, padding="same")))
        return history[-1]


class RecurrentBlock:
    """``O = X + U * DilatedFSMN(V)`` with ``U``, ``V`` pointwise projections of ``X``."""

    def __init__(self, reg: ParamRegistry, name: str, channels: int, cfg: SeparatorConfig):
        self.wu = reg.uniform(f"{name}.conv_u1", (channels, channels), channels)
        self.wv = reg.uniform(f"{name}.conv_u2", (channels, channels), channels)
        self.fsmn = DilatedFSMN(reg, f"{name}.fsmn", channels, cfg.fsmn_taps, cfg.fsmn_dilations)

    def __call__(self, x: Tensor) -> Tensor:
        u = F.pointwise_conv(x, self.wu)
        y = self.fsmn(F.pointwise_conv(x, self.wv))
        return F.add(x, F.mul(u, y))


class MaskEstimator:
    def __init__(self, reg: ParamRegistry, channels: int, cfg: SeparatorConfig, name: str = "separator"):
        self.cfg = cfg
        self.blocks = []
        for r in range(cfg.R):
            self.blocks.append(MossFormerBlock(reg, f"{name}.block{r}.mossformer", channels, cfg))
            self.blocks.append(RecurrentBlock(reg, f"{name}.block{r}.recurrent", channels, cfg))
        self.head = reg.uniform(f"{name}.mask_head", (channels, channels), channels)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return F.relu(F.pointwise_conv(x, self.head))


def estimate_mask(x_fuse: Tensor, estimator: MaskEstimator) -> Tensor:
    return estimator(x_fuse)
