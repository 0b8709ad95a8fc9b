"""Finite-difference checks for every differentiable building block.

Each case builds small float64 inputs, wraps the op in a scalar loss
(a fixed random projection of its output) and compares backprop against
central differences. ``run_gradchecks`` is what the ``gradcheck`` command
prints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .eeg_encoder import ElectrodeAttention, GraphLayer, default_adjacency, gcn_layer
from .extractor import DilatedFSMN, MossFormerBlock, RecurrentBlock, SeparatorConfig, chunked_attention
from .metrics import si_sdr_loss
from .nn import ParamRegistry, Tensor, functional as F, grad_check

DOUBLE_TOL = 1e-6


@dataclass
class GradResult:
    name: str
    error: float
    seconds: float
    tol: float = DOUBLE_TOL

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Scalar loss ``sum(out * W)`` with a fixed random ``W`` of out's shape."""
    w = Tensor(rng.standard_normal(out.shape))
    return lambda t: F.sum(F.mul(t, w))


def _case(forward, leaves, rng):
    proj = _project(forward(), rng)
    return lambda: proj(forward()), leaves


def case_conv1d(rng):
    x, w = _leaf(rng, 2, 3, 23), _leaf(rng, 4, 3, 5)
    return _case(lambda: F.conv1d(x, w, stride=2, padding=(1, 3), dilation=2), [x, w], rng)


def case_conv1d_transpose(rng):
    x, w = _leaf(rng, 2, 4, 7), _leaf(rng, 4, 1, 6)
    return _case(lambda: F.conv1d_transpose(x, w, stride=3), [x, w], rng)


def case_depthwise_conv1d(rng):
    x, w = _leaf(rng, 2, 3, 19), _leaf(rng, 3, 4)
    return _case(lambda: F.depthwise_conv1d(x, w, dilation=2), [x, w], rng)


def case_bn_elu(rng):
    x = _leaf(rng, 3, 4, 6)
    g, b = _leaf(rng, 4), _leaf(rng, 4, scale=0.1)
    return _case(lambda: F.bn_elu(x, g, b, axis=1, training=True), [x, g, b], rng)


def case_softmax_attention(rng):
    q, k, v = _leaf(rng, 2, 6, 3), _leaf(rng, 2, 6, 3), _leaf(rng, 2, 6, 4)
    mask = np.tril(np.ones((6, 6), dtype=bool))
    return _case(lambda: F.softmax_attention(q, k, v, mask=mask), [q, k, v], rng)


def case_chunked_attention(rng):
    q, k, v = _leaf(rng, 1, 11, 3), _leaf(rng, 1, 11, 3), _leaf(rng, 1, 11, 2)
    return _case(lambda: chunked_attention(q, k, v, chunk=4), [q, k, v], rng)


def case_linear_attention(rng):
    q, k, v = _leaf(rng, 2, 9, 3), _leaf(rng, 2, 9, 3), _leaf(rng, 2, 9, 4)
    return _case(lambda: F.linear_attention(q, k, v), [q, k, v], rng)


def case_gcn_layer(rng):
    reg = ParamRegistry(np.float64, seed=int(rng.integers(1 << 30)))
    layer = GraphLayer(reg, "gcn", default_adjacency(5), 4)
    x = _leaf(rng, 3, 5, 4)
    return _case(lambda: gcn_layer(x, layer, training=True), [x, *reg.params.values()], rng)


def case_electrode_attention(rng):
    reg = ParamRegistry(np.float64, seed=int(rng.integers(1 << 30)))
    attn = ElectrodeAttention(reg, 4, 4, 2)
    x = _leaf(rng, 2, 5, 4)
    return _case(lambda: attn(x), [x, *reg.params.values()], rng)


def case_fsmn(rng):
    reg = ParamRegistry(np.float64, seed=int(rng.integers(1 << 30)))
    fsmn = DilatedFSMN(reg, "fsmn", 3, 3, (1, 2))
    x = _leaf(rng, 1, 3, 12)
    return _case(lambda: fsmn(x), [x, *reg.params.values()], rng)


def case_gates(rng):
    u, av, au = _leaf(rng, 2, 3, 5), _leaf(rng, 2, 3, 5), _leaf(rng, 2, 3, 5)
    return _case(lambda: F.sigmoid(F.mul(F.mul(u, av), au)), [u, av, au], rng)


def case_mossformer_block(rng):
    reg = ParamRegistry(np.float64, seed=int(rng.integers(1 << 30)))
    block = MossFormerBlock(reg, "mf", 4, SeparatorConfig(chunk_size=4))
    x = _leaf(rng, 1, 4, 10)
    return _case(lambda: block(x), [x, *reg.params.values()], rng)


def case_recurrent_block(rng):
    reg = ParamRegistry(np.float64, seed=int(rng.integers(1 << 30)))
    block = RecurrentBlock(reg, "rb", 3, SeparatorConfig(fsmn_taps=3, fsmn_dilations=(1, 2)))
    x = _leaf(rng, 1, 3, 9)
    return _case(lambda: block(x), [x, *reg.params.values()], rng)


def case_interpolate_time(rng):
    x = _leaf(rng, 2, 3, 7)
    return _case(lambda: F.interpolate_time(x, 12), [x], rng)


def case_si_sdr_loss(rng):
    est = _leaf(rng, 2, 1, 40)
    ref = Tensor(rng.standard_normal((2, 1, 40)))
    return lambda: si_sdr_loss(est, ref), [est]


CASES: dict[str, Callable] = {
    "conv1d": case_conv1d,
    "conv1d_transpose": case_conv1d_transpose,
    "depthwise_conv1d": case_depthwise_conv1d,
    "bn_elu": case_bn_elu,
    "softmax_attention": case_softmax_attention,
    "chunked_attention": case_chunked_attention,
    "linear_attention": case_linear_attention,
    "gcn_layer": case_gcn_layer,
    "electrode_attention": case_electrode_attention,
    "fsmn": case_fsmn,
    "gates": case_gates,
    "mossformer_block": case_mossformer_block,
    "recurrent_block": case_recurrent_block,
    "interpolate_time": case_interpolate_time,
    "si_sdr_loss": case_si_sdr_loss,
}


def run_gradchecks(names=None, seed: int = 0, tol: float = DOUBLE_TOL) -> list[GradResult]:
    results = []
    for name in names or CASES:
        rng = np.random.default_rng([seed, sorted(CASES).index(name)])
        start = time.perf_counter()
        loss_fn, leaves = CASES[name](rng)
        try:
            err = grad_check(loss_fn, leaves)
        except (FloatingPointError, ValueError):
            err = float("nan")
        results.append(GradResult(name, err, time.perf_counter() - start, tol))
    return results


def format_results(results: list[GradResult]) -> str:
    lines = [f"{'op':<22}{'max rel err':>14}{'seconds':>10}  status"]
    for r in results:
        lines.append(f"{r.name:<22}{r.error:>14.3e}{r.seconds:>10.3f}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
