"""Stem adapter: a single strided convolution mapping embedding tensors
to the spatial shape a ViT-style backbone expects after its stem.

Three variants: a 4x4 kernel with stride 2 and padding 1, a 2x2 kernel
with stride 2, and a pointwise 1x1 projection for inputs that already
match the target side. Forward is plain cross-correlation; backward
returns exact analytic gradients so external trainers can learn the
adapter weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

# variant -> (kernel, stride, pad)
VARIANTS = {
    "conv4": (4, 2, 1),
    "conv2": (2, 2, 0),
    "pointwise": (1, 1, 0),
}


@dataclass(frozen=True, eq=False)
class StemAdapter:
    variant: str
    weights: np.ndarray  # (d_V, d_c, k, k)
    bias: np.ndarray     # (d_V,)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown adapter variant {self.variant!r}")
        kernel, _, _ = VARIANTS[self.variant]
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 4 or w.shape[2] != kernel or w.shape[3] != kernel:
            raise InputError(f"{self.variant} weights must be (d_V, d_c, {kernel}, {kernel}), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise InputError(f"bias must have shape ({w.shape[0]},), got {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def output_side(self, m: int) -> int:
        kernel, stride, pad = VARIANTS[self.variant]
        span = m + 2 * pad - kernel
        if span < 0 or span % stride != 0:
            raise ConfigError(f"variant {self.variant} does not divide input side {m}")
        return span // stride + 1


def init_adapter(variant: str, d_c: int, d_V: int, seed: int = 0) -> StemAdapter:
    """Truncated-normal weights (std 0.02, clipped support [-2, 2] via
    redraw) and zero bias, deterministic per seed."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown adapter variant {variant!r}")
    if d_c < 1 or d_V < 1:
        raise InputError("channel counts must be >= 1")
    kernel = VARIANTS[variant][0]
    rng = np.random.default_rng(seed)
    shape = (d_V, d_c, kernel, kernel)
    w = rng.normal(0.0, 0.02, size=shape)
    bad = np.abs(w) > 2.0
    while bad.any():
        w[bad] = rng.normal(0.0, 0.02, size=int(bad.sum()))
        bad = np.abs(w) > 2.0
    return StemAdapter(variant=variant, weights=w.astype(np.float32), bias=np.zeros(d_V, np.float32))


def _check_input(x: np.ndarray, adapter: StemAdapter) -> int:
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise InputError(f"expected a (d_c, m, m) tensor, got shape {x.shape}")
    if x.shape[0] != adapter.in_channels:
        raise InputError(f"input has {x.shape[0]} channels, adapter expects {adapter.in_channels}")
    return adapter.output_side(x.shape[1])


def _windows(x_padded: np.ndarray, kernel: int, stride: int, k_out: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x_padded, (kernel, kernel), axis=(1, 2))
    return win[:, ::stride, ::stride][:, :k_out, :k_out]


def stem_forward(x: np.ndarray, adapter: StemAdapter) -> np.ndarray:
    """Cross-correlate x (d_c, m, m) with the adapter kernel: (d_V, k, k)."""
    k_out = _check_input(x, adapter)
    kernel, stride, pad = VARIANTS[adapter.variant]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kernel, stride, k_out)
    d_c = x.shape[0]
    # im2col so the contraction is a single BLAS matmul
    cols = win.transpose(1, 2, 0, 3, 4).reshape(k_out * k_out, d_c * kernel * kernel)
    wmat = adapter.weights.reshape(adapter.out_channels, d_c * kernel * kernel)
    out = cols @ wmat.T + adapter.bias
    return out.T.reshape(adapter.out_channels, k_out, k_out)


def stem_backward(x: np.ndarray, adapter: StemAdapter, grad_out: np.ndarray):
    """Exact gradients of stem_forward: returns (grad_x, grad_w, grad_b)."""
    k_out = _check_input(x, adapter)
    if grad_out.shape != (adapter.out_channels, k_out, k_out):
        raise InputError(
            f"grad_out shape {grad_out.shape} does not match output "
            f"({adapter.out_channels}, {k_out}, {k_out})"
        )
    kernel, stride, pad = VARIANTS[adapter.variant]
    d_c, m = x.shape[0], x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kernel, stride, k_out)

    grad_b = grad_out.sum(axis=(1, 2))
    grad_w = np.einsum("cijuv,oij->ocuv", win, grad_out)

    # Scatter each kernel tap's contribution back onto the padded input.
    grad_xp = np.zeros_like(xp, dtype=np.result_type(x.dtype, grad_out.dtype))
    contrib = np.einsum("oij,ocuv->cijuv", grad_out, adapter.weights)
    rows = stride * np.arange(k_out)
    for u in range(kernel):
        for v in range(kernel):
            grad_xp[:, rows[:, None] + u, rows[None, :] + v] += contrib[:, :, :, u, v]
    grad_x = grad_xp[:, pad : pad + m, pad : pad + m] if pad else grad_xp
    return grad_x, grad_w, grad_b


# -- weight interchange ------------------------------------------------------
#
# Little-endian f32 with a four-u32 shape header (d_V, d_c, k, k), the
# weights row-major, then d_V bias values. The kernel size identifies
# the variant.

def save_adapter(path, adapter: StemAdapter) -> None:
    import struct

    with open(path, "wb") as f:
        f.write(struct.pack("<IIII", *adapter.weights.shape))
        f.write(np.ascontiguousarray(adapter.weights, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(adapter.bias, dtype="<f4").tobytes())


def load_adapter(path) -> StemAdapter:
    import struct

    from .errors import FormatError

    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16:
            raise FormatError("adapter file too small for its header")
        d_v, d_c, kh, kw = struct.unpack("<IIII", head)
        body = f.read()
    want = 4 * (d_v * d_c * kh * kw + d_v)
    if len(body) != want or kh != kw:
        raise FormatError("adapter file body does not match its header")
    by_kernel = {VARIANTS[v][0]: v for v in VARIANTS}
    if kh not in by_kernel:
        raise FormatError(f"no adapter variant with kernel size {kh}")
    n_w = d_v * d_c * kh * kw
    flat = np.frombuffer(body, dtype="<f4")
    return StemAdapter(
        variant=by_kernel[kh],
        weights=flat[:n_w].reshape(d_v, d_c, kh, kw).copy(),
        bias=flat[n_w:].copy(),
    )
