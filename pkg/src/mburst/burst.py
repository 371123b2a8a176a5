"""Burst-dependent plasticity for dense and convolutional layers.

A burst layer runs the usual forward pass (somatic potential ``v``, event
rate ``e = f(v)``) and then a feedback pass driven by burst rates coming
down from the layer above:

* the head turns the loss derivative into a bursting probability
  ``p_L = clamp01(p_bar - h(e) * dL/de)`` around a fixed reference ``p_bar``;
* every layer's burst rates are ``b = p * e`` (teacher) and
  ``b_bar = p_bar * e`` (no teacher);
* a hidden layer receives ``Y`` applied to the downstream bursts, gates it
  with ``h(e) = f'(v) / e`` into dendritic potentials ``u``/``u_bar`` and
  squashes those with ``sigmoid(beta * u + alpha)`` into ``p``/``p_bar``;
* plasticity is proportional to ``(b - b_bar)`` times the presynaptic event
  rate, and the same change is applied to ``W`` and ``Y``.

The feedback weights ``Y`` of layer ``l`` carry bursts from layer ``l``'s
output back to its input side, so ``Y`` has the transpose shape of ``W`` for
dense layers and the kernel shape for conv layers (applied as a transposed
convolution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2dCore, DenseCore
from .tensor import (
    Conv2dSpec,
    DimensionError,
    StateError,
    Tensor,
    as_tensor,
    clamp01,
    conv2d_feedback,
    conv2d_weight_grad,
    div_safe,
    sigmoid,
)

FEEDBACK_INITS = ("symmetric", "random")


@dataclass(frozen=True)
class BurstConfig:
    p_bar_top: float = 0.2
    beta: float = 1.0
    alpha: float = 0.0
    eps_event: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.p_bar_top < 1.0:
            raise ValueError(f"p_bar_top must lie in (0, 1), got {self.p_bar_top}")
        if self.eps_event <= 0.0:
            raise ValueError(f"eps_event must be positive, got {self.eps_event}")


def h_from(v: Tensor, e: Tensor, f_prime: Tensor, eps_event: float = 1e-8) -> Tensor:
    """``f'(v) / e`` with the quotient suppressed where ``e <= eps_event``."""
    return div_safe(f_prime, e, eps_event)


class _BurstMixin:
    """Burst state and the burst computations shared by dense and conv burst layers."""

    def _reset_burst(self):
        self.u = self.u_bar = self.p = self.p_bar = self.b = self.b_bar = None

    def h_of_e(self, eps_event: float = 1e-8) -> Tensor:
        self._require_forward()
        return h_from(self.v, self.e, self.f_prime(), eps_event)

    def output_burst_prob(self, loss_grad_e, cfg: BurstConfig) -> tuple[Tensor, Tensor]:
        self._require_forward()
        g = as_tensor(loss_grad_e)
        if g.shape != self.e.shape:
            raise DimensionError(f"loss gradient {g.shape} does not match event rate {self.e.shape}")
        self.p_bar = np.full_like(self.e, cfg.p_bar_top)
        self.p = clamp01(self.p_bar - self.h_of_e(cfg.eps_event) * g)
        return self.p, self.p_bar

    def burst_rates(self) -> tuple[Tensor, Tensor]:
        if self.p is None or self.p_bar is None or self.e is None:
            raise StateError(f"{type(self).__name__}: bursting probabilities not computed")
        self.b = self.p * self.e
        self.b_bar = self.p_bar * self.e
        return self.b, self.b_bar

    def dendritic_potentials(self, fb, fb_bar, eps_event: float = 1e-8) -> tuple[Tensor, Tensor]:
        """Gate feedback already carried through the downstream ``Y``.

        Flat feedback is reshaped onto a map-shaped event rate (the inverse
        of the flatten between conv and dense stages).
        """
        self._require_forward()
        fb, fb_bar = as_tensor(fb), as_tensor(fb_bar)
        if fb.shape != fb_bar.shape:
            raise DimensionError(f"feedback shapes differ: {fb.shape} vs {fb_bar.shape}")
        if fb.shape != self.e.shape:
            if fb.size != self.e.size or fb.shape[0] != self.e.shape[0]:
                raise DimensionError(f"feedback {fb.shape} cannot map onto event rate {self.e.shape}")
            fb, fb_bar = fb.reshape(self.e.shape), fb_bar.reshape(self.e.shape)
        h = self.h_of_e(eps_event)
        self.u = h * fb
        self.u_bar = h * fb_bar
        return self.u, self.u_bar

    def hidden_burst_prob(self, cfg: BurstConfig) -> tuple[Tensor, Tensor]:
        if self.u is None or self.u_bar is None:
            raise StateError(f"{type(self).__name__}: dendritic potentials not computed")
        self.p = sigmoid(cfg.beta * self.u + cfg.alpha)
        self.p_bar = sigmoid(cfg.beta * self.u_bar + cfg.alpha)
        return self.p, self.p_bar

    def _burst_delta(self) -> Tensor:
        if self.b is None or self.b_bar is None:
            raise StateError(f"{type(self).__name__}: burst rates not computed")
        return self.b - self.b_bar

    def param_names(self) -> list[str]:
        return ["W", "Y"]

    def forward(self, x) -> Tensor:
        self._reset_burst()
        return super().forward(x)


class BurstDenseLayer(_BurstMixin, DenseCore):
    def __init__(self, n_in, n_out, activation="relu", rng=None, W=None, Y=None, feedback_init="symmetric"):
        super().__init__(n_in, n_out, activation, rng=rng, W=W)
        self.feedback_init = feedback_init
        self.Y = _init_feedback(self.W.T, Y, feedback_init, rng, n_out)
        self._reset_burst()

    def feedback(self, burst) -> Tensor:
        """Carry this layer's output-side bursts to its input side: ``Y b``."""
        burst = as_tensor(burst)
        if burst.ndim != 2 or burst.shape[1] != self.n_out:
            raise DimensionError(f"feedback expects [B,{self.n_out}], got {burst.shape} (Y {self.Y.shape})")
        return burst @ self.Y.T

    def weight_update(self, input_event=None) -> tuple[Tensor, Tensor]:
        """Optimizer-ready pseudo-gradients ``(g_W, g_Y)``, batch-averaged.

        ``g_W = -mean_b (b - b_bar) e_prev^T``: descending on it applies a
        potentiation proportional to ``(b - b_bar)``, which points along the
        negative loss gradient.
        """
        d = self._burst_delta()
        x = self.x if input_event is None else as_tensor(input_event)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape != (d.shape[0], self.n_in):
            raise DimensionError(f"input event {x.shape} does not match burst delta {d.shape} / W {self.W.shape}")
        g_w = -(d.T @ x) / d.shape[0]
        return g_w, g_w.T.copy()

    def descriptor(self) -> dict:
        return {**super().descriptor(), "rule": "burst", "feedback_init": self.feedback_init}


class BurstConv2dLayer(_BurstMixin, Conv2dCore):
    def __init__(self, spec: Conv2dSpec, activation="relu", rng=None, W=None, Y=None, feedback_init="symmetric"):
        super().__init__(spec, activation, rng=rng, W=W)
        self.feedback_init = feedback_init
        fan = spec.out_channels * spec.kernel_h * spec.kernel_w
        self.Y = _init_feedback(self.W, Y, feedback_init, rng, fan)
        self._reset_burst()

    def feedback(self, burst) -> Tensor:
        """Transposed convolution of output-side bursts with the kernel ``Y``."""
        self._require_forward()
        return conv2d_feedback(burst, self.Y, self.spec, self.x.shape)

    def weight_update(self, input_event=None) -> tuple[Tensor, Tensor]:
        d = self._burst_delta()
        if input_event is None:
            g_w = -conv2d_weight_grad(self.x, d, self.spec, cols=self.cols) / d.shape[0]
        else:
            g_w = -conv2d_weight_grad(input_event, d, self.spec) / d.shape[0]
        return g_w, g_w.copy()

    def descriptor(self) -> dict:
        return {**super().descriptor(), "rule": "burst", "feedback_init": self.feedback_init}


def _init_feedback(w_like: Tensor, Y, mode: str, rng, fan_in: int) -> Tensor:
    if Y is not None:
        Y = as_tensor(Y).copy()
        if Y.shape != w_like.shape:
            raise DimensionError(f"Y has shape {Y.shape}, expected {w_like.shape}")
        return Y
    if mode == "symmetric":
        return np.array(w_like, copy=True)
    if mode == "random":
        if rng is None:
            raise ValueError("random feedback init needs an rng")
        return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=w_like.shape)
    raise ValueError(f"feedback_init must be one of {FEEDBACK_INITS}, got {mode!r}")


# Functional spellings of the layer methods.


def forward(layer, x) -> Tensor:
    return layer.forward(x)


def h_of_e(layer, eps_event: float = 1e-8) -> Tensor:
    return layer.h_of_e(eps_event)


def output_burst_prob(layer, loss_grad_e, cfg: BurstConfig):
    return layer.output_burst_prob(loss_grad_e, cfg)


def burst_rates(layer):
    return layer.burst_rates()


def dendritic_potentials(layer, downstream, b_next, b_bar_next, eps_event: float = 1e-8):
    """``u = h(e) * Y b_next`` with ``Y`` taken from ``downstream``."""
    return layer.dendritic_potentials(downstream.feedback(b_next), downstream.feedback(b_bar_next), eps_event)


def hidden_burst_prob(layer, cfg: BurstConfig):
    return layer.hidden_burst_prob(cfg)


def weight_update(layer, input_event=None):
    return layer.weight_update(input_event)
