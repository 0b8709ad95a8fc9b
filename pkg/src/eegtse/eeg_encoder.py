"""EEG encoder: multi-scale temporal convolutions and band-power features,
each refined by a graph convolution over electrodes, then fused by
self-attention across electrodes and aligned to the speech frame axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .errors import ConfigError, FormatError, LengthError, ShapeError
from .nn import ParamRegistry, Tensor, as_tensor
from .nn import functional as F

VARIANTS = ("tf", "t", "f", "raw")


@dataclass
class EEGEncoderConfig:
    n_electrodes: int = 16
    fs: float = 128.0
    scale_filters: int = 8      # filters per temporal scale
    temporal_dim: int = 22      # per-electrode features of the temporal view
    out_channels: int = 64      # channels of the aligned embedding
    attn_dim: int = 32
    heads: int = 4
    variant: str = "tf"         # which views feed the attention stage
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_electrodes < 2:
            raise ConfigError("need at least two electrodes")
        if self.attn_dim % self.heads:
            raise ConfigError(f"heads={self.heads} must divide attn_dim={self.attn_dim}")
        multiscale_widths(self.fs)

    @property
    def feature_dim(self) -> int:
        return {"tf": self.temporal_dim + 2 * len(dsp.CANONICAL_BANDS),
                "t": self.temporal_dim,
                "f": 2 * len(dsp.CANONICAL_BANDS),
                "raw": 1}[self.variant]


def multiscale_widths(fs: float, n_scales: int = 5) -> list[int]:
    """Kernel widths ``0.5**k * fs`` for ``k = 1..n_scales``."""
    widths = [int(round(0.5 ** k * fs)) for k in range(1, n_scales + 1)]
    if widths[-1] < 1 or any(a <= b for a, b in zip(widths, widths[1:])):
        raise ConfigError(f"fs={fs} Hz gives degenerate temporal kernels {widths}")
    return widths


# ---------------------------------------------------------------- graph structure


def default_adjacency(n: int) -> np.ndarray:
    """Self-loops plus uniform all-to-all coupling."""
    return np.eye(n) + np.full((n, n), 1.0 / n)


def montage_adjacency(positions: np.ndarray) -> np.ndarray:
    """Gaussian kernel on inter-electrode distance, bandwidth = median distance."""
    pos = np.asarray(positions, dtype=np.float64)
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    off = np.sqrt(d2[~np.eye(len(pos), dtype=bool)])
    sigma = np.median(off) if off.size else 1.0
    if sigma <= 0:
        raise ConfigError("electrode positions are degenerate (zero median distance)")
    return np.exp(-d2 / (2.0 * sigma ** 2))


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` for a symmetric nonnegative ``A``.

    Isolated nodes get a self-loop first so every degree is positive.
    """
    a = np.array(adj, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ConfigError("adjacency must be symmetric (undirected graph)")
    if np.any(a < 0):
        raise ConfigError("adjacency must be nonnegative")
    isolated = a.sum(axis=1) <= 0
    a[isolated, isolated] = 1.0
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def read_montage(path) -> tuple[list[str], np.ndarray]:
    """Montage text file: ``name x y z`` per line; ``#`` starts a comment."""
    names, rows = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'name x y z', got {line!r}")
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        names.append(parts[0])
    if len(set(names)) != len(names):
        raise FormatError(f"{path}: duplicate electrode names")
    return names, np.array(rows)


def sinusoidal_encoding(n_pos: int, dim: int) -> np.ndarray:
    pos = np.arange(n_pos)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / max(dim, 1))
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ---------------------------------------------------------------- layers


class BatchNorm:
    def __init__(self, reg: ParamRegistry, name: str, n: int, axis: int, eps: float):
        self.gamma = reg.constant(f"{name}.gamma", (n,), 1.0)
        self.beta = reg.constant(f"{name}.beta", (n,), 0.0)
        self.running_mean = reg.buffer(f"{name}.running_mean", np.zeros(n))
        self.running_var = reg.buffer(f"{name}.running_var", np.ones(n))
        self.axis, self.eps = axis, eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return F.bn_elu(x, self.gamma, self.beta, axis=self.axis, eps=self.eps, training=training,
                        running_mean=self.running_mean, running_var=self.running_var)


class GraphLayer:
    """Residual two-weight graph convolution with BN+ELU wrappers.

    ``out = bn_elu(Ahat @ bn_elu(E W1) W2 + E)`` with ``Ahat`` the
    symmetrically normalized adjacency; the feature width is preserved so the
    residual type-checks.
    """

    def __init__(self, reg: ParamRegistry, name: str, adjacency: np.ndarray, dim: int, eps: float = 1e-5):
        self.name = name
        self.adj_norm = normalize_adjacency(adjacency)
        self.w1 = reg.uniform(f"{name}.w1", (dim, dim), dim)
        self.w2 = reg.uniform(f"{name}.w2", (dim, dim), dim)
        self.bn_inner = BatchNorm(reg, f"{name}.bn_inner", dim, axis=-1, eps=eps)
        self.bn_outer = BatchNorm(reg, f"{name}.bn_outer", dim, axis=-1, eps=eps)

    def __call__(self, x, training: bool = False) -> Tensor:
        return gcn_layer(x, self, training)


def gcn_layer(x, layer: GraphLayer, training: bool = False) -> Tensor:
    """Apply ``layer`` to node features ``... x C x D``."""
    x = as_tensor(x)
    n = layer.adj_norm.shape[0]
    if x.shape[-2] != n or x.shape[-1] != layer.w1.shape[0]:
        raise ShapeError(f"{layer.name}: features {x.shape} do not match {n} nodes x {layer.w1.shape[0]}")
    hidden = layer.bn_inner(F.matmul(x, layer.w1), training)
    mixed = F.matmul(Tensor(layer.adj_norm.astype(x.dtype)), F.matmul(hidden, layer.w2))
    return layer.bn_outer(F.add(mixed, x), training)


class MultiScaleTemporal:
    """Five per-electrode temporal convolutions (shared across electrodes),
    each followed by BN+ELU, concatenated and reduced by a 1x1 convolution."""

    def __init__(self, reg: ParamRegistry, cfg: EEGEncoderConfig, name: str = "eeg.temporal"):
        self.widths = multiscale_widths(cfg.fs)
        self.kernels, self.norms = [], []
        for k, width in enumerate(self.widths):
            self.kernels.append(reg.uniform(f"{name}.scale{k}.weight", (cfg.scale_filters, 1, width), width))
            self.norms.append(BatchNorm(reg, f"{name}.scale{k}.bn", cfg.scale_filters, axis=1, eps=cfg.bn_eps))
        n_cat = cfg.scale_filters * len(self.widths)
        self.reduce = reg.uniform(f"{name}.reduce", (cfg.temporal_dim, n_cat), n_cat)
        self.cfg = cfg

    @property
    def concat_width(self) -> int:
        return self.cfg.scale_filters * len(self.widths)

    def __call__(self, eeg, training: bool = False) -> Tensor:
        """``B x C x T`` -> ``B x C x D_T x T``."""
        eeg = as_tensor(eeg)
        b, c, t = eeg.shape
        if t < self.widths[0]:
            raise LengthError(f"EEG of {t} samples is shorter than the widest kernel ({self.widths[0]})")
        x = F.reshape(eeg, (b * c, 1, t))
        branches = [norm(F.conv1d(x, kernel, padding="same"), training)
                    for kernel, norm in zip(self.kernels, self.norms)]
        out = F.pointwise_conv(F.concat(branches, axis=1), self.reduce)
        return F.reshape(out, (b, c, self.cfg.temporal_dim, t))


def frequency_features(eeg: np.ndarray, fs: float) -> np.ndarray:
    """Per-electrode ``[PSD(5) | DE(5)]``; accepts ``C x T`` or ``B x C x T``."""
    psd, de = dsp.eeg_band_features(np.asarray(eeg, dtype=np.float64), fs)
    return np.concatenate([psd, de], axis=-1)


class ElectrodeAttention:
    """Multi-head softmax self-attention across electrodes with a residual path."""

    def __init__(self, reg: ParamRegistry, dim: int, attn_dim: int, heads: int, name: str = "eeg.attn"):
        self.heads = heads
        self.wq = reg.uniform(f"{name}.wq", (dim, attn_dim), dim)
        self.wk = reg.uniform(f"{name}.wk", (dim, attn_dim), dim)
        self.wv = reg.uniform(f"{name}.wv", (dim, attn_dim), dim)
        self.wo = reg.uniform(f"{name}.wo", (attn_dim, dim), attn_dim)

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        x = F.reshape(x, (*lead, n, self.heads, d // self.heads))
        k = len(lead)
        return F.transpose(x, (*range(k), k + 1, k, k + 2))

    def __call__(self, x: Tensor) -> Tensor:
        """``... x C x D`` -> same shape."""
        q, k, v = (self._split(F.matmul(x, w)) for w in (self.wq, self.wk, self.wv))
        att = F.softmax_attention(q, k, v)
        nd = att.ndim
        att = F.transpose(att, (*range(nd - 3), nd - 2, nd - 3, nd - 1))
        att = F.reshape(att, (*att.shape[:-2], att.shape[-2] * att.shape[-1]))
        return F.add(x, F.matmul(att, self.wo))


class EEGEncoder:
    def __init__(self, reg: ParamRegistry, cfg: EEGEncoderConfig, adjacency: np.ndarray | None = None,
                 name: str = "eeg"):
        self.cfg = cfg
        c = cfg.n_electrodes
        if adjacency is None:
            adjacency = default_adjacency(c)
        if adjacency.shape != (c, c):
            raise ConfigError(f"adjacency is {adjacency.shape}, expected {(c, c)}")
        self.temporal = self.t_gcn = self.f_gcn = None
        if cfg.variant in ("tf", "t"):
            self.temporal = MultiScaleTemporal(reg, cfg, f"{name}.temporal")
            self.t_gcn = GraphLayer(reg, f"{name}.t_gcn", adjacency, cfg.temporal_dim, cfg.bn_eps)
        if cfg.variant in ("tf", "f"):
            self.f_gcn = GraphLayer(reg, f"{name}.f_gcn", adjacency, 2 * len(dsp.CANONICAL_BANDS), cfg.bn_eps)
        dim = cfg.feature_dim
        self.pos_enc = sinusoidal_encoding(c, dim)
        self.attention = ElectrodeAttention(reg, dim, cfg.attn_dim, cfg.heads, f"{name}.attn")
        self.project = reg.uniform(f"{name}.project", (c * dim, cfg.out_channels), c * dim)

    def views(self, eeg: np.ndarray, training: bool = False) -> Tensor:
        """Concatenated per-electrode view features, ``B x T x C x F``."""
        b, c, t = eeg.shape
        parts = []
        if self.temporal is not None:
            e_t = F.transpose(self.temporal(eeg, training), (0, 3, 1, 2))  # B,T,C,D_T
            parts.append(self.t_gcn(e_t, training))
        if self.f_gcn is not None:
            e_f = Tensor(frequency_features(eeg, self.cfg.fs).astype(eeg.dtype))  # B,C,10
            e_f = self.f_gcn(e_f, training)
            # static features: tile along time by broadcasting
            tiled = F.add(F.reshape(e_f, (b, 1, c, e_f.shape[-1])),
                          Tensor(np.zeros((1, t, 1, 1), dtype=eeg.dtype)))
            parts.append(tiled)
        if self.cfg.variant == "raw":
            parts.append(Tensor(eeg.transpose(0, 2, 1)[..., None]))
        return parts[0] if len(parts) == 1 else F.concat(parts, axis=-1)

    def __call__(self, eeg, n_frames: int, training: bool = False) -> Tensor:
        """``B x C x T_e`` EEG -> ``B x out_channels x n_frames`` embedding."""
        eeg = np.asarray(eeg.data if isinstance(eeg, Tensor) else eeg)
        if eeg.ndim == 2:
            eeg = eeg[None]
        eeg = eeg.astype(self.project.dtype, copy=False)
        b, c, t = eeg.shape
        if c != self.cfg.n_electrodes:
            raise ShapeError(f"EEG has {c} channels, encoder was built for {self.cfg.n_electrodes}")
        x = F.add(self.views(eeg, training), Tensor(self.pos_enc.astype(eeg.dtype)))
        z = self.attention(x)                                       # B,T,C,F
        z = F.reshape(z, (b, t, c * self.cfg.feature_dim))
        out = F.transpose(F.matmul(z, self.project), (0, 2, 1))      # B,C_EEG,T
        return F.interpolate_time(out, n_frames)


def encode_eeg(eeg, encoder: EEGEncoder, n_frames: int, training: bool = False) -> Tensor:
    return encoder(eeg, n_frames, training)
