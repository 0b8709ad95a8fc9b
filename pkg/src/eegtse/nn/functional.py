"""Differentiable ops on :class:`Tensor`.

Shapes follow the channels-first convention used throughout the package:
sequences are ``B x C x T``. Convolutions carry no bias.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class LengthError(ValueError):
    """A sequence is too short for the requested operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b):
    # python scalars adopt the tensor operand's dtype instead of promoting it
    if not isinstance(a, Tensor) and np.isscalar(a) and isinstance(b, Tensor):
        a = np.asarray(a, dtype=b.dtype)
    if not isinstance(b, Tensor) and np.isscalar(b) and isinstance(a, Tensor):
        b = np.asarray(b, dtype=a.dtype)
    a = as_tensor(a)
    b = as_tensor(b)
    dtype = np.result_type(a.data, b.data)
    if a.data.dtype != dtype and not a.requires_grad:
        a = Tensor(a.data.astype(dtype))
    if b.data.dtype != dtype and not b.requires_grad:
        b = Tensor(b.data.astype(dtype))
    return a, b


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), backward, "div")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data > floor

    def backward(g):
        return (g * keep,)

    return make(np.where(keep, x.data, floor).astype(x.dtype), (x,), backward, "clamp_min")


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg = x.data <= 0
    em1 = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(neg, alpha * em1, x.data)

    def backward(g):
        return (g * np.where(neg, alpha * (em1 + 1.0), 1.0),)

    return make(out.astype(x.dtype), (x,), backward, "elu")


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), backward, "softmax")


# ---------------------------------------------------------------- reductions and shape


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make(x.data[index], (x,), backward, "slice")


def pad_axis(x: Tensor, axis: int, left: int, right: int) -> Tensor:
    """Zero-pad one axis."""
    x = as_tensor(x)
    widths = [(0, 0)] * x.ndim
    widths[axis] = (left, right)
    n = x.shape[axis]

    def backward(g):
        return (np.take(g, np.arange(left, left + n), axis=axis),)

    return make(np.pad(x.data, widths), (x,), backward, "pad")


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def pointwise_conv(x: Tensor, weight: Tensor) -> Tensor:
    """1x1 convolution: ``B x Cin x T`` with ``Cout x Cin`` weights."""
    if weight.ndim != 2 or x.shape[-2] != weight.shape[1]:
        raise ShapeError(f"pointwise_conv: input {x.shape} vs weight {weight.shape}")
    return matmul(weight, x)


# ---------------------------------------------------------------- convolutions


def conv_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0,
                       dilation: int = 1) -> int:
    span = dilation * (kernel - 1) + 1
    return (length + 2 * padding - span) // stride + 1


def _resolve_padding(padding, span: int):
    if padding == "same":
        left = (span - 1) // 2
        return left, span - 1 - left
    if isinstance(padding, (tuple, list)):
        return int(padding[0]), int(padding[1])
    return int(padding), int(padding)


def conv1d(x: Tensor, weight: Tensor, stride: int = 1, padding=0, dilation: int = 1) -> Tensor:
    """Dense 1-D convolution (cross-correlation).

    Parameters
    ----------
    x : Tensor
        ``B x Cin x T`` input.
    weight : Tensor
        ``Cout x Cin x K`` kernel.
    stride, dilation : int
    padding : int, ``(left, right)`` or ``"same"``
        Zero padding. ``"same"`` keeps ``T`` at stride 1, putting the extra
        sample on the right for even spans.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError("conv1d expects B x Cin x T input and Cout x Cin x K kernel")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    b, cin, t = x.shape
    cout, _, k = weight.shape
    span = dilation * (k - 1) + 1
    left, right = _resolve_padding(padding, span)
    tp = t + left + right
    if span > tp:
        raise LengthError(f"conv1d: kernel span {span} exceeds padded length {tp}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if (left or right) else x.data
    windows = sliding_window_view(xp, span, axis=2)[:, :, ::stride, ::dilation]  # B,Cin,T',K
    t_out = windows.shape[2]
    cols = windows.transpose(0, 2, 1, 3).reshape(b, t_out, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = np.matmul(cols, wmat.T).transpose(0, 2, 1)

    def backward(g):
        gt = g.transpose(0, 2, 1)  # B,T',Cout
        gw = None
        if weight.requires_grad:
            gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(gt, wmat).reshape(b, t_out, cin, k)
            gxp = np.zeros((b, cin, tp), dtype=g.dtype)
            stop = stride * (t_out - 1) + 1
            for j in range(k):
                off = j * dilation
                gxp[:, :, off:off + stop:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, left:left + t]
        return gx, gw

    return make(np.ascontiguousarray(out), (x, weight), backward, "conv1d")


def conv1d_transpose(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """Transposed convolution (overlap-add), the adjoint of :func:`conv1d`.

    ``x`` is ``B x Cin x S`` and ``weight`` is ``Cin x Cout x K``; the output
    has length ``(S - 1) * stride + K``. Passing the kernel of a forward
    ``conv1d`` unchanged gives its exact adjoint.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError("conv1d_transpose expects B x Cin x S input and Cin x Cout x K kernel")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv1d_transpose: input has {x.shape[1]} channels, kernel expects {weight.shape[0]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    b, cin, s = x.shape
    _, cout, k = weight.shape
    t = (s - 1) * stride + k
    wmat = weight.data.reshape(cin, cout * k)
    frames = np.matmul(x.data.transpose(0, 2, 1), wmat).reshape(b, s, cout, k)
    out = np.zeros((b, cout, t), dtype=frames.dtype)
    stop = stride * (s - 1) + 1
    for j in range(k):
        out[:, :, j:j + stop:stride] += frames[:, :, :, j].transpose(0, 2, 1)

    def backward(g):
        # gather the output-gradient windows every frame contributed to
        windows = sliding_window_view(g, k, axis=2)[:, :, ::stride, :]  # B,Cout,S,K
        gcols = windows.transpose(0, 2, 1, 3).reshape(b, s, cout * k)
        gx = gw = None
        if x.requires_grad:
            gx = np.matmul(gcols, wmat.T).transpose(0, 2, 1)
        if weight.requires_grad:
            gw = np.tensordot(x.data.transpose(0, 2, 1), gcols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        return gx, gw

    return make(out, (x, weight), backward, "conv1d_transpose")


def depthwise_conv1d(x: Tensor, weight: Tensor, dilation: int = 1, padding="same") -> Tensor:
    """Per-channel dilated convolution; ``weight`` is ``C x K``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"depthwise_conv1d: input {x.shape} vs weight {weight.shape}")
    b, c, t = x.shape
    k = weight.shape[1]
    span = dilation * (k - 1) + 1
    left, right = _resolve_padding(padding, span)
    tp = t + left + right
    if span > tp:
        raise LengthError(f"depthwise_conv1d: kernel span {span} exceeds padded length {tp}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    t_out = tp - span + 1
    out = np.zeros((b, c, t_out), dtype=np.result_type(x.data, weight.data))
    for j in range(k):
        off = j * dilation
        out += weight.data[None, :, j, None] * xp[:, :, off:off + t_out]

    def backward(g):
        gx = gw = None
        if weight.requires_grad:
            gw = np.stack([(g * xp[:, :, j * dilation:j * dilation + t_out]).sum(axis=(0, 2))
                           for j in range(k)], axis=1)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                off = j * dilation
                gxp[:, :, off:off + t_out] += weight.data[None, :, j, None] * g
            gx = gxp[:, :, left:left + t]
        return gx, gw

    return make(out, (x, weight), backward, "depthwise_conv1d")


# ---------------------------------------------------------------- normalization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = 1, eps: float = 1e-5,
               training: bool = True, running_mean: np.ndarray | None = None,
               running_var: np.ndarray | None = None, momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalization over every axis except ``axis``.

    In training mode the batch statistics are used and, when running buffers
    are given, they are updated in place. Eval mode requires the buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("eps must be positive")
    axis = axis % x.ndim
    red = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    if training:
        mu = x.data.mean(axis=red, keepdims=True)
        var = x.data.var(axis=red, keepdims=True)
        if running_mean is not None:
            n = x.data.size // x.shape[axis]
            unbiased = var.reshape(-1) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batch_norm needs running statistics")
        mu = running_mean.reshape(bshape).astype(x.dtype)
        var = running_var.reshape(bshape).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g_ = gamma.data.reshape(bshape)
    out = g_ * xhat + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * g_
            if training:
                gx = inv * (gxhat - gxhat.mean(axis=red, keepdims=True)
                            - xhat * (gxhat * xhat).mean(axis=red, keepdims=True))
            else:
                gx = gxhat * inv
        return gx, ggamma, gbeta

    return make(out.astype(x.dtype), (x, gamma, beta), backward, "batch_norm")


def bn_elu(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = 1, eps: float = 1e-5,
           training: bool = True, running_mean=None, running_var=None) -> Tensor:
    """Batch normalization followed by ELU."""
    return elu(batch_norm(x, gamma, beta, axis=axis, eps=eps, training=training,
                          running_mean=running_mean, running_var=running_var))


# ---------------------------------------------------------------- attention


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
                      scale: float | None = None) -> Tensor:
    """Full softmax attention over the second-to-last axis.

    ``q``: ``... x Lq x d``, ``k``: ``... x Lk x d``, ``v``: ``... x Lk x dv``.
    ``mask`` is a boolean array broadcastable to ``... x Lq x Lk``; False
    entries are excluded from the softmax.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention: keys and values differ in length")
    if q.shape[-2] == 0 or k.shape[-2] == 0:
        raise LengthError("attention over an empty sequence")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * scale
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    w = w.astype(q.dtype)
    out = np.matmul(w, v.data)

    def backward(g):
        gv = _unbroadcast(np.matmul(np.swapaxes(w, -1, -2), g), v.shape) if v.requires_grad else None
        gw = np.matmul(g, np.swapaxes(v.data, -1, -2))
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * scale
        gq = _unbroadcast(np.matmul(gs, k.data), q.shape) if q.requires_grad else None
        gk = _unbroadcast(np.matmul(np.swapaxes(gs, -1, -2), q.data), k.shape) if k.requires_grad else None
        return gq, gk, gv

    return make(out, (q, k, v), backward, "softmax_attention")


def elu_feature_map(x: Tensor) -> Tensor:
    """ELU(x) + 1: a strictly positive feature map."""
    return add(elu(x), 1.0)


def linear_attention(q: Tensor, k: Tensor, v: Tensor, feature_map=elu_feature_map,
                     eps: float = 1e-8) -> Tensor:
    """Kernelized attention in O(L): ``phi(Q) (phi(K)^T V) / phi(Q) sum(phi(K))``."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention: keys and values differ in length")
    if k.shape[-2] == 0:
        raise LengthError("attention over an empty sequence")
    fq, fk = feature_map(q), feature_map(k)
    kv = matmul(transpose(fk, _swap_last(fk.ndim)), v)          # ... d x dv
    ksum = sum(fk, axis=-2, keepdims=True)                       # ... 1 x d
    num = matmul(fq, kv)                                         # ... Lq x dv
    den = matmul(fq, transpose(ksum, _swap_last(ksum.ndim)))     # ... Lq x 1
    return div(num, clamp_min(den, eps))


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# ---------------------------------------------------------------- misc


def linear_interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``n_in x n_out`` matrix resampling a sequence by linear interpolation
    with aligned endpoints."""
    m = np.zeros((n_in, n_out), dtype=dtype)
    if n_in == 1:
        m[0, :] = 1.0
        return m
    pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    cols = np.arange(n_out)
    m[lo, cols] = 1.0 - frac
    m[lo + 1, cols] += frac
    return m


def interpolate_time(x: Tensor, n_out: int) -> Tensor:
    """Linearly resample the last axis to ``n_out`` points."""
    x = as_tensor(x)
    if x.shape[-1] == n_out:
        return x
    return matmul(x, Tensor(linear_interp_matrix(x.shape[-1], n_out, dtype=x.dtype)))
