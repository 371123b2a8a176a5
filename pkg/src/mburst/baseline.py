"""Backpropagation layers used by the unimodal and multimodal baselines."""

from __future__ import annotations

from .layers import Conv2dCore, DenseCore
from .tensor import DimensionError, StateError, Tensor, as_tensor, conv2d_feedback, conv2d_weight_grad


class BPDenseLayer(DenseCore):
    def bp_backward(self, upstream_grad) -> tuple[Tensor, Tensor]:
        """Return ``(dL/dx, dL/dW)`` given ``dL/de``; the weight gradient is batch-averaged."""
        if self.e is None:
            raise StateError("BPDenseLayer: forward has not been called")
        g = as_tensor(upstream_grad)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != self.e.shape:
            raise DimensionError(f"upstream grad {g.shape} does not match output {self.e.shape}")
        delta = g * self.f_prime()
        return delta @ self.W, (delta.T @ self.x) / g.shape[0]

    def descriptor(self) -> dict:
        return {**super().descriptor(), "rule": "bp"}


class BPConv2dLayer(Conv2dCore):
    def bp_backward(self, upstream_grad) -> tuple[Tensor, Tensor]:
        if self.e is None:
            raise StateError("BPConv2dLayer: forward has not been called")
        g = as_tensor(upstream_grad)
        if g.shape != self.e.shape:
            raise DimensionError(f"upstream grad {g.shape} does not match output {self.e.shape}")
        delta = g * self.f_prime()
        input_grad = conv2d_feedback(delta, self.W, self.spec, self.x.shape)
        weight_grad = conv2d_weight_grad(self.x, delta, self.spec, cols=self.cols) / g.shape[0]
        return input_grad, weight_grad

    def descriptor(self) -> dict:
        return {**super().descriptor(), "rule": "bp"}


def bp_forward(layer, x) -> Tensor:
    return layer.forward(x)


def bp_backward(layer, upstream_grad) -> tuple[Tensor, Tensor]:
    return layer.bp_backward(upstream_grad)
