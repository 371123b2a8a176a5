"""Weighted binary cross-entropy and Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor


@dataclass(frozen=True)
class WeightedBceConfig:
    pos_weight: float = 1.0
    eps_log: float = 1e-7

    def __post_init__(self):
        if self.pos_weight <= 0:
            raise ValueError(f"pos_weight must be positive, got {self.pos_weight}")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6


def _prep(probs, targets, cfg: WeightedBceConfig):
    p, y = as_tensor(probs), as_tensor(targets)
    if p.shape != y.shape:
        raise DimensionError(f"wbce: probs {p.shape} vs targets {y.shape}")
    return np.clip(p, cfg.eps_log, 1.0 - cfg.eps_log), y


def wbce_loss(probs, targets, cfg: WeightedBceConfig = WeightedBceConfig()) -> float:
    p, y = _prep(probs, targets, cfg)
    return float(-np.mean(cfg.pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def wbce_grad(probs, targets, cfg: WeightedBceConfig = WeightedBceConfig()) -> Tensor:
    """Elementwise dL/dp of :func:`wbce_loss` (mean over all elements).

    Differentiated through the clamped probability, i.e. the clamp is treated
    as identity inside [eps_log, 1 - eps_log].
    """
    p, y = _prep(probs, targets, cfg)
    return (-cfg.pos_weight * y / p + (1.0 - y) / (1.0 - p)) / p.size


@dataclass
class AdamState:
    m: Tensor
    v: Tensor
    step: int = 0

    @classmethod
    def zeros_like(cls, param) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param, grad, state: AdamState, cfg: AdamConfig = AdamConfig()) -> Tensor:
    """One decoupled-weight-decay Adam update; mutates ``state`` and returns the new parameter."""
    param, grad = as_tensor(param), as_tensor(grad)
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(f"adam: param {param.shape}, grad {grad.shape}, moments {state.m.shape}")
    state.step += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = state.m / (1.0 - cfg.beta1**state.step)
    v_hat = state.v / (1.0 - cfg.beta2**state.step)
    decayed = param * (1.0 - cfg.lr * cfg.weight_decay)
    return decayed - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


class Adam:
    """Adam over a name -> array mapping, updated in place."""

    def __init__(self, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.state: dict[str, AdamState] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        for name, g in grads.items():
            p = params[name]
            st = self.state.get(name)
            if st is None:
                st = self.state[name] = AdamState.zeros_like(p)
            p[...] = adam_step(p, g, st, self.cfg)

    @property
    def step_count(self) -> int:
        return max((s.step for s in self.state.values()), default=0)
