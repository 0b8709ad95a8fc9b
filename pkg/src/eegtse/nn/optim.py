from __future__ import annotations

import numpy as np

from .params import ParamRegistry


def clip_grad_norm(reg: ParamRegistry, max_norm: float) -> float:
    """Rescale all gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for _, p in reg if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class Adam:
    def __init__(self, reg: ParamRegistry, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.reg = reg
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in reg}
        self.v = {n: np.zeros_like(p.data) for n, p in reg}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.reg:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam_m/{n}": a.copy() for n, a in self.m.items()}
        out.update({f"adam_v/{n}": a.copy() for n, a in self.v.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray], t: int):
        for key, value in state.items():
            kind, name = key.split("/", 1)
            (self.m if kind == "adam_m" else self.v)[name][...] = value
        self.t = t
