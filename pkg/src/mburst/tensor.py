"""Dense float64 tensors and the numeric kernels the layers are built on.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every public
function checks shapes explicitly and never broadcasts; a mismatch raises
:class:`DimensionError` naming both shapes.

Convolutions follow the deep-learning convention (cross-correlation with
zero padding). ``conv2d_feedback`` is the exact adjoint of ``conv2d`` and
``conv2d_weight_grad`` is its derivative with respect to the kernel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray

MBT1_MAGIC = b"MBT1"

# Named, fixed stream ids so each purpose gets an independent PCG64 stream.
RNG_STREAMS = {"weights": 1, "data": 2, "shuffle": 3, "split": 4, "eval": 5}


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class StateError(RuntimeError):
    """A layer was driven out of order (e.g. feedback before forward)."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of the operation."""


class FormatError(ValueError):
    """A serialized tensor is malformed."""


def as_tensor(x) -> Tensor:
    return np.asarray(x, dtype=np.float64)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} does not match {b.shape}")


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return a + b


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return a - b


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return a * b


def div_safe(a, b, eps: float = 1e-8) -> Tensor:
    """``a / b`` where ``|b| > eps``, zero elsewhere."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "div_safe")
    out = np.zeros_like(a)
    ok = np.abs(b) > eps
    np.divide(a, b, out=out, where=ok)
    return out


def relu(x) -> Tensor:
    return np.maximum(as_tensor(x), 0.0)


def relu_prime(x) -> Tensor:
    # derivative taken as 0 at the kink
    return (as_tensor(x) > 0.0).astype(np.float64)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clamp01(x) -> Tensor:
    return np.clip(as_tensor(x), 0.0, 1.0)


def outer(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise DimensionError(f"outer: expected vectors, got {a.shape} and {b.shape}")
    return np.outer(a, b)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


# -- convolution --------------------------------------------------------------


@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w, self.stride) < 1:
            raise DimensionError(f"invalid Conv2dSpec {self}")
        if self.padding < 0:
            raise DimensionError(f"negative padding in {self}")

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"{self} produces empty output for input {h}x{w}")
        return ho, wo


def _check_conv_operands(x: Tensor, kernel: Tensor, spec: Conv2dSpec) -> None:
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be [B,C,H,W], got {x.shape}")
    if kernel.shape != spec.kernel_shape:
        raise DimensionError(f"conv2d: kernel {kernel.shape} does not match spec {spec.kernel_shape}")
    if x.shape[1] != spec.in_channels:
        raise DimensionError(f"conv2d: input {x.shape} has {x.shape[1]} channels, kernel {kernel.shape} expects {spec.in_channels}")


def im2col(x: Tensor, spec: Conv2dSpec) -> Tensor:
    """Patch matrix of shape [B*H'*W', Cin*kh*kw] (rows ordered b, h', w')."""
    x = as_tensor(x)
    b, c, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    p, s = spec.padding, spec.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    win = win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
    # [B,C,Ho,Wo,kh,kw] -> [B,Ho,Wo,C,kh,kw]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * spec.kernel_h * spec.kernel_w)


def col2im(cols: Tensor, spec: Conv2dSpec, out_shape: tuple[int, int, int, int]) -> Tensor:
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the input grid."""
    b, c, h, w = out_shape
    ho, wo = spec.output_hw(h, w)
    kh, kw, p, s = spec.kernel_h, spec.kernel_w, spec.padding, spec.stride
    patches = cols.reshape(b, ho, wo, c, kh, kw)
    out = np.zeros((b, c, h + 2 * p, w + 2 * p))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out[:, :, p : p + h, p : p + w]


def conv2d(x, kernel, spec: Conv2dSpec) -> Tensor:
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_operands(x, kernel, spec)
    ho, wo = spec.output_hw(x.shape[2], x.shape[3])
    out = im2col(x, spec) @ kernel.reshape(spec.out_channels, -1).T
    return out.reshape(x.shape[0], ho, wo, spec.out_channels).transpose(0, 3, 1, 2)


def _check_map(delta: Tensor, spec: Conv2dSpec, in_shape, op: str) -> None:
    if len(in_shape) != 4 or in_shape[1] != spec.in_channels:
        raise DimensionError(f"{op}: input shape {tuple(in_shape)} inconsistent with {spec}")
    expected = (in_shape[0], spec.out_channels, *spec.output_hw(in_shape[2], in_shape[3]))
    if delta.shape != expected:
        raise DimensionError(f"{op}: map {delta.shape} does not match forward output {expected}")


def conv2d_feedback(burst, kernel, spec: Conv2dSpec, out_shape) -> Tensor:
    """Transposed convolution carrying an output-shaped map back to ``out_shape``."""
    burst, kernel = as_tensor(burst), as_tensor(kernel)
    out_shape = tuple(int(d) for d in out_shape)
    if kernel.shape != spec.kernel_shape:
        raise DimensionError(f"conv2d_feedback: kernel {kernel.shape} does not match spec {spec.kernel_shape}")
    _check_map(burst, spec, out_shape, "conv2d_feedback")
    rows = burst.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
    return col2im(rows @ kernel.reshape(spec.out_channels, -1), spec, out_shape)


def conv2d_weight_grad(x, delta, spec: Conv2dSpec, cols: Tensor | None = None) -> Tensor:
    """d/dK of sum(conv2d(x; K) * delta), summed (not averaged) over the batch.

    ``cols`` may carry a precomputed ``im2col(x, spec)`` to skip the rebuild.
    """
    x, delta = as_tensor(x), as_tensor(delta)
    _check_map(delta, spec, x.shape, "conv2d_weight_grad")
    if cols is None:
        cols = im2col(x, spec)
    b = x.shape[0]
    # per-sample products summed afterwards: identical samples add exactly
    rows = delta.reshape(b, spec.out_channels, -1)
    per_sample = rows @ cols.reshape(b, rows.shape[2], -1)
    return per_sample.sum(axis=0).reshape(spec.kernel_shape)


# -- rng ----------------------------------------------------------------------


def make_rng(seed: int, purpose: str = "weights") -> np.random.Generator:
    """PCG64 generator for ``(seed, purpose)``.

    Streams are derived with ``SeedSequence(seed, spawn_key=(stream_id,))``
    so the weight, data, shuffle, split and eval streams never overlap and
    are stable across platforms.
    """
    if purpose not in RNG_STREAMS:
        raise KeyError(f"unknown rng stream {purpose!r}; expected one of {sorted(RNG_STREAMS)}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(RNG_STREAMS[purpose],))
    return np.random.Generator(np.random.PCG64(ss))


# -- MBT1 serialization -------------------------------------------------------


def encode_mbt1(t) -> bytes:
    t = as_tensor(t)
    header = MBT1_MAGIC + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def decode_mbt1(buf: bytes) -> Tensor:
    if buf[:4] != MBT1_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MBT1_MAGIC!r}")
    if len(buf) < 8:
        raise FormatError("truncated MBT1 header")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * ndim
    if len(buf) < off:
        raise FormatError("truncated MBT1 shape block")
    shape = struct.unpack_from(f"<{ndim}I", buf, 8)
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + 4 * n:
        raise FormatError(f"MBT1 payload has {len(buf) - off} bytes, shape {shape} needs {4 * n}")
    return np.frombuffer(buf, dtype="<f4", offset=off).astype(np.float64).reshape(shape)


def save_mbt1(path, t) -> None:
    Path(path).write_bytes(encode_mbt1(t))


def load_mbt1(path) -> Tensor:
    return decode_mbt1(Path(path).read_bytes())
