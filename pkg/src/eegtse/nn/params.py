from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamRegistry:
    """Named weights plus non-trainable buffers (batch-norm running stats).

    Gradients live on each parameter's ``Tensor.grad``.
    """

    def __init__(self, dtype=np.float32, seed: int = 0):
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        """Uniform init in +-1/sqrt(fan_in)."""
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def constant(self, name: str, shape: tuple, value: float) -> Tensor:
        return self.add(name, np.full(shape, value))

    def buffer(self, name: str, value) -> np.ndarray:
        if name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for n, p in self.params.items()}

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, keyed ``param/<name>`` and ``buffer/<name>``."""
        out = {f"param/{n}": p.data.copy() for n, p in self.params.items()}
        out.update({f"buffer/{n}": b.copy() for n, b in self.buffers.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        expected = set(self.state())
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for key, value in state.items():
            kind, name = key.split("/", 1)
            if kind == "param":
                p = self.params[name]
                if value.shape != p.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = np.array(value, dtype=self.dtype)
            else:
                # in-place so layers holding the buffer see the new values
                self.buffers[name][...] = value
