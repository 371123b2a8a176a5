"""Forward machinery shared by burst and backprop layers.

Both learning rules subclass these cores, so their forward paths are the
same code and produce bit-identical event rates for identical weights.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Conv2dSpec,
    DimensionError,
    StateError,
    Tensor,
    as_tensor,
    im2col,
    relu,
    relu_prime,
    sigmoid,
)

ACTIVATIONS = ("relu", "sigmoid")


def activate(v: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu(v)
    if activation == "sigmoid":
        return sigmoid(v)
    raise ValueError(f"unknown activation {activation!r}")


def activation_prime(v: Tensor, e: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu_prime(v)
    return e * (1.0 - e)


def init_weights(rng: np.random.Generator, shape, fan_in: int, activation: str) -> Tensor:
    # He-normal for relu, Glorot-style fan-in scaling for sigmoid
    gain = 2.0 if activation == "relu" else 1.0
    return rng.normal(0.0, math.sqrt(gain / fan_in), size=shape)


class DenseCore:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "relu", rng=None, W=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        if W is None:
            if rng is None:
                raise ValueError("either rng or W is required")
            W = init_weights(rng, (n_out, n_in), n_in, activation)
        self.W = as_tensor(W).copy()
        if self.W.shape != (n_out, n_in):
            raise DimensionError(f"W has shape {self.W.shape}, expected {(n_out, n_in)}")
        self.x = self.v = self.e = None

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"dense layer expects [B,{self.n_in}], got {x.shape} (W {self.W.shape})")
        self.x = x
        self.v = x @ self.W.T
        self.e = activate(self.v, self.activation)
        return self.e[0] if squeeze else self.e

    def f_prime(self) -> Tensor:
        self._require_forward()
        return activation_prime(self.v, self.e, self.activation)

    def _require_forward(self):
        if self.e is None:
            raise StateError(f"{type(self).__name__}: forward has not been called")

    def param_names(self) -> list[str]:
        return ["W"]

    def descriptor(self) -> dict:
        return {"kind": self.kind, "activation": self.activation, "n_in": self.n_in, "n_out": self.n_out}


class Conv2dCore:
    kind = "conv2d"

    def __init__(self, spec: Conv2dSpec, activation: str = "relu", rng=None, W=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.spec, self.activation = spec, activation
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        if W is None:
            if rng is None:
                raise ValueError("either rng or W is required")
            W = init_weights(rng, spec.kernel_shape, fan_in, activation)
        self.W = as_tensor(W).copy()
        if self.W.shape != spec.kernel_shape:
            raise DimensionError(f"kernel has shape {self.W.shape}, expected {spec.kernel_shape}")
        self.x = self.cols = self.v = self.e = None

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(f"conv layer expects [B,{self.spec.in_channels},H,W], got {x.shape}")
        b = x.shape[0]
        ho, wo = self.spec.output_hw(x.shape[2], x.shape[3])
        # cols kept for the weight gradient
        self.x = x
        self.cols = im2col(x, self.spec)
        v = self.cols @ self.W.reshape(self.spec.out_channels, -1).T
        self.v = v.reshape(b, ho, wo, self.spec.out_channels).transpose(0, 3, 1, 2)
        self.e = activate(self.v, self.activation)
        return self.e

    def f_prime(self) -> Tensor:
        self._require_forward()
        return activation_prime(self.v, self.e, self.activation)

    def _require_forward(self):
        if self.e is None:
            raise StateError(f"{type(self).__name__}: forward has not been called")

    def param_names(self) -> list[str]:
        return ["W"]

    def descriptor(self) -> dict:
        s = self.spec
        return {
            "kind": self.kind,
            "activation": self.activation,
            "in_channels": s.in_channels,
            "out_channels": s.out_channels,
            "kernel_h": s.kernel_h,
            "kernel_w": s.kernel_w,
            "stride": s.stride,
            "padding": s.padding,
        }
