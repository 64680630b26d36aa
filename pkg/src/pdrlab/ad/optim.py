"""Optimizers."""

from typing import Sequence

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam with bias correction; moments are kept in the parameter dtype."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state: dict) -> None:
        m, v = state["m"], state["v"]
        if len(m) != len(self.params) or len(v) != len(self.params):
            raise ValueError(
                f"optimizer state holds {len(m)} moments for {len(self.params)} parameters"
            )
        for i, p in enumerate(self.params):
            if m[i].shape != p.shape or v[i].shape != p.shape:
                raise ValueError(f"optimizer moment {i} has shape {m[i].shape}, parameter has {p.shape}")
        self.t = int(state["t"])
        self.m = [np.asarray(a, dtype=p.data.dtype).copy() for a, p in zip(m, self.params)]
        self.v = [np.asarray(a, dtype=p.data.dtype).copy() for a, p in zip(v, self.params)]
