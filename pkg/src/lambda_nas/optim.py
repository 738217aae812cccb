"""Plain-array optimizers: Nesterov-momentum SGD and Adam.

Both update parameter arrays in place and keep their running buffers as
parallel lists, so a supernet can be stepped without any parameter
re-registration machinery. Weight decay is folded into the gradient (L2
style) in both optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "NesterovSGD", "OptimizerState"]


@dataclass
class NesterovSGD:
    """SGD with Nesterov momentum.

    Per array: d = g + wd * theta; buf = mu * buf + d; theta -= lr * (d + mu * buf).
    Buffers start at zero, so the first step is a plain gradient step scaled
    by (1 + mu).
    """

    momentum: float
    weight_decay: float
    buffers: list[np.ndarray] = field(default_factory=list)

    def init(self, params: list[np.ndarray]) -> None:
        self.buffers = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        if len(self.buffers) != len(params):
            raise ValueError("optimizer not initialized for this parameter list")
        mu = self.momentum
        for theta, g, buf in zip(params, grads, self.buffers):
            d = g + self.weight_decay * theta
            buf *= mu
            buf += d
            theta -= lr * (d + mu * buf)


@dataclass
class AdamState:
    """Adam with standard bias correction and L2 weight decay."""

    lr: float
    beta1: float
    beta2: float
    weight_decay: float
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def init(self, param: np.ndarray) -> None:
        self.m = np.zeros_like(param)
        self.v = np.zeros_like(param)
        self.step_count = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None or self.v is None:
            raise ValueError("optimizer not initialized")
        self.step_count += 1
        g = grad + self.weight_decay * param
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class OptimizerState:
    """Joint optimizer state of one search: SGD buffers for the operation
    weights and Adam moments for the architecture logits."""

    omega: NesterovSGD
    alpha: AdamState
