"""ADAM optimizer over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")


class Adam:
    """Standard ADAM with bias correction, applied in place to a dict of
    arrays. Only names listed in ``trainable`` are updated."""

    def __init__(self, trainable: tuple[str, ...], config: AdamConfig = AdamConfig()):
        self.cfg = config
        self.trainable = tuple(trainable)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        b1t = 1.0 - cfg.beta1 ** self.t
        b2t = 1.0 - cfg.beta2 ** self.t
        for name in self.trainable:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(tensors[name])
                self.v[name] = np.zeros_like(tensors[name])
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            tensors[name] -= cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def state(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=float) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=float) for k, v in state["v"].items()}
