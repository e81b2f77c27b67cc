"""Token-space augmentations and the one-hot / embedding conversions.

The processing order is fixed by construction: synonym replacement and
square swaps act on integer grids, random resized crop acts on one-hot
channel tensors, and cut-paste mixing plus Gaussian noise act on
embedding tensors. Each stage takes an explicit numpy Generator so
callers control determinism.

Floating-point policy: carriers are float32 in the pipeline, but every
op accumulates in float64 and preserves the caller's dtype, so tests can
run entirely in float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, SynonymTable
from .errors import InputError


@dataclass
class AugmentConfig:
    """Probabilities, crop law, and noise scales for the train pipeline.

    sigma_channel / sigma_full default to None, meaning 0.1 times the
    mean per-channel standard deviation of the codebook in use.
    """

    p_s: float = 0.25                     # synonym replacement, per position
    p_r: float = 0.25                     # random square swap, per grid
    rrc_scale: tuple[float, float] = (0.08, 1.0)
    rrc_ratio: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    m: int = 28                           # output spatial side
    cutmix_alpha: float = 1.0
    cutmix_prob: float = 1.0
    noise_prob: float = 0.5
    sigma_channel: float | None = None
    sigma_full: float | None = None
    synonym_count: int = 5
    renormalize: bool = False  # rescale interpolated weights to unit channel sum
    seed: int = 0

    def __post_init__(self):
        for name in ("p_s", "p_r", "cutmix_prob", "noise_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {v}")
        if not (0.0 < self.rrc_scale[0] <= self.rrc_scale[1]):
            raise InputError(f"rrc_scale bounds out of order: {self.rrc_scale}")
        if not (0.0 < self.rrc_ratio[0] <= self.rrc_ratio[1]):
            raise InputError(f"rrc_ratio bounds out of order: {self.rrc_ratio}")
        if self.m < 1:
            raise InputError("output side m must be >= 1")
        for name in ("sigma_channel", "sigma_full"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise InputError(f"{name} must be >= 0")
        if self.seed < 0:
            raise InputError("seed must be >= 0")

    def resolve_sigmas(self, cb: Codebook) -> tuple[float, float]:
        """Fill unset noise scales from the codebook's per-channel spread."""
        base = 0.1 * float(np.mean(np.std(cb.vectors.astype(np.float64), axis=1)))
        sc = base if self.sigma_channel is None else self.sigma_channel
        sf = base if self.sigma_full is None else self.sigma_full
        return sc, sf


# -- integer-grid stage ------------------------------------------------------


def token_eda_sr(grid: np.ndarray, syn: SynonymTable, p_s: float, rng: np.random.Generator) -> np.ndarray:
    """Independently replace each token by a uniform synonym with prob p_s."""
    out = np.array(grid, copy=True)
    if p_s <= 0.0 or syn.width == 0:
        if p_s > 0.0:
            rng.random(size=out.shape)  # keep the draw schedule stable
        return out
    mask = rng.random(size=out.shape) < p_s
    n_hit = int(mask.sum())
    if n_hit:
        picks = rng.integers(0, syn.width, size=n_hit)
        out[mask] = syn.neighbors[out[mask], picks]
    return out


def token_eda_rs(grid: np.ndarray, p_r: float, rng: np.random.Generator, stats=None) -> np.ndarray:
    """With prob p_r, swap two random equal-sized non-overlapping squares.

    Side length is uniform on [1, n // 2]; corners are rejection-sampled
    up to 100 times, after which the swap is skipped (counted on stats
    when given). The token multiset is always preserved.
    """
    n = grid.shape[0]
    if grid.ndim != 2 or grid.shape[1] != n or n < 2:
        raise InputError(f"expected a square grid with side >= 2, got shape {grid.shape}")
    out = np.array(grid, copy=True)
    if rng.random() >= p_r:
        return out
    side = int(rng.integers(1, n // 2 + 1))
    for _ in range(100):
        r1, c1 = int(rng.integers(0, n - side + 1)), int(rng.integers(0, n - side + 1))
        r2, c2 = int(rng.integers(0, n - side + 1)), int(rng.integers(0, n - side + 1))
        if abs(r1 - r2) >= side or abs(c1 - c2) >= side:
            return swap_squares(out, (r1, c1), (r2, c2), side)
    if stats is not None:
        stats.rs_skips += 1
    return out


def swap_squares(grid: np.ndarray, a: tuple[int, int], b: tuple[int, int], side: int) -> np.ndarray:
    """Swap two side x side regions in place and return the grid."""
    r1, c1 = a
    r2, c2 = b
    block = grid[r1 : r1 + side, c1 : c1 + side].copy()
    grid[r1 : r1 + side, c1 : c1 + side] = grid[r2 : r2 + side, c2 : c2 + side]
    grid[r2 : r2 + side, c2 : c2 + side] = block
    return grid


# -- one-hot stage -----------------------------------------------------------


def one_hot(grid: np.ndarray, vocab: int, dtype=np.float32) -> np.ndarray:
    """(V, h, w) indicator tensor of a token grid."""
    g = np.asarray(grid)
    if g.size and (g.min() < 0 or g.max() >= vocab):
        raise InputError(f"token index out of range [0, {vocab})")
    h, w = g.shape
    out = np.zeros((vocab, h, w), dtype=dtype)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out[g, ii, jj] = 1
    return out


def _keys_kernel(t: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5."""
    at = np.abs(t)
    out = np.zeros_like(at)
    near = at <= 1.0
    far = (at > 1.0) & (at < 2.0)
    out[near] = (1.5 * at[near] - 2.5) * at[near] ** 2 + 1.0
    out[far] = -0.5 * (((at[far] - 5.0) * at[far] + 8.0) * at[far] - 4.0)
    return out


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror out-of-range indices without repeating the edge sample."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bicubic interpolation matrix, half-pixel centers."""
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    t = src - base
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        w = _keys_kernel(t - tap)
        cols = _reflect_index(base + tap, n_in)
        np.add.at(mat, (rows, cols), w)
    return mat


def resize_bicubic(channels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bicubic-resize a (C, h, w) stack; negative interpolation lobes are kept."""
    c, h, w = channels.shape
    dtype = channels.dtype
    wr = _resize_matrix(h, out_h)
    wc = _resize_matrix(w, out_w)
    tmp = np.tensordot(wr, channels.astype(np.float64), axes=([1], [1]))  # (out_h, C, w)
    out = np.tensordot(tmp, wc, axes=([2], [1]))                          # (out_h, C, out_w)
    return np.ascontiguousarray(out.transpose(1, 0, 2)).astype(dtype)


def sample_rrc_box(
    h: int, w: int, scale: tuple[float, float], ratio: tuple[float, float], rng: np.random.Generator
) -> tuple[int, int, int, int]:
    """Sample (top, left, height, width); falls back to the largest
    ratio-respecting center crop after 10 rejected attempts."""
    area = h * w
    log_ratio = (np.log(ratio[0]), np.log(ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(scale[0], scale[1])
        aspect = float(np.exp(rng.uniform(log_ratio[0], log_ratio[1])))
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    in_ratio = w / h
    if in_ratio < ratio[0]:
        cw = w
        ch = int(round(cw / ratio[0]))
    elif in_ratio > ratio[1]:
        ch = h
        cw = int(round(ch * ratio[1]))
    else:
        cw, ch = w, h
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def token_rrc(weights: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random resized crop on a (V, n, n) channel tensor, bicubic to m x m."""
    _, h, w = weights.shape
    top, left, ch, cw = sample_rrc_box(h, w, cfg.rrc_scale, cfg.rrc_ratio, rng)
    crop = weights[:, top : top + ch, left : left + cw]
    return _resize_sparse(crop, cfg.m, cfg.m)


def resize_full(weights: np.ndarray, m: int) -> np.ndarray:
    """Deterministic full-grid resize used in eval mode."""
    return _resize_sparse(weights, m, m)


def _resize_sparse(crop: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # Channels that are all-zero inside the crop stay all-zero after
    # interpolation, so only live channels are worth resizing.
    live = np.flatnonzero(crop.any(axis=(1, 2)))
    out = np.zeros((crop.shape[0], out_h, out_w), dtype=crop.dtype)
    if live.size:
        out[live] = resize_bicubic(crop[live], out_h, out_w)
    return out


def renormalize_weights(weights: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Rescale each spatial position to unit channel sum.

    Off by default in the pipeline; interpolated weights are otherwise
    mixed at their raw values, negative lobes included.
    """
    sums = weights.sum(axis=0, keepdims=True)
    safe = np.where(np.abs(sums) > eps, sums, 1.0)
    return (weights / safe).astype(weights.dtype)


# -- embedding stage ---------------------------------------------------------


def embed(weights: np.ndarray, cb: Codebook) -> np.ndarray:
    """Mix codebook columns by per-position channel weights: (V,h,w) -> (d_c,h,w)."""
    if weights.ndim != 3 or weights.shape[0] != cb.size:
        raise InputError(f"expected ({cb.size}, h, w) weights, got {weights.shape}")
    out = np.tensordot(cb.vectors.astype(np.float64), weights.astype(np.float64), axes=([1], [0]))
    return out.astype(weights.dtype)


def sample_cut_box(h: int, w: int, lam0: float, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """CutMix rectangle (y1, y2, x1, x2): side fraction sqrt(1 - lam0),
    center uniform, clipped to the grid."""
    frac = float(np.sqrt(1.0 - lam0))
    cut_h = int(h * frac)
    cut_w = int(w * frac)
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y1 = int(np.clip(cy - cut_h // 2, 0, h))
    y2 = int(np.clip(cy + cut_h // 2, 0, h))
    x1 = int(np.clip(cx - cut_w // 2, 0, w))
    x2 = int(np.clip(cx + cut_w // 2, 0, w))
    return y1, y2, x1, x2


def paste_box(a: np.ndarray, b: np.ndarray, box: tuple[int, int, int, int]) -> tuple[np.ndarray, float]:
    """Replace box region of a with b across all channels; returns
    (mixed, lam) with lam = 1 - cut_area / spatial_area."""
    if a.shape != b.shape:
        raise InputError(f"tensor shapes differ: {a.shape} vs {b.shape}")
    y1, y2, x1, x2 = box
    out = np.array(a, copy=True)
    out[:, y1:y2, x1:x2] = b[:, y1:y2, x1:x2]
    lam = 1.0 - ((y2 - y1) * (x2 - x1)) / float(a.shape[1] * a.shape[2])
    return out, lam


def token_cutmix(
    a: np.ndarray, b: np.ndarray, alpha: float, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Paste a random rectangle of b into a across all channels.

    The target rectangle area comes from lam0 ~ Beta(alpha, alpha); the
    returned weight is the area-corrected lam = 1 - cut_area / (h * w).
    Callers mix labels as lam * y_a + (1 - lam) * y_b.
    """
    if a.shape != b.shape:
        raise InputError(f"tensor shapes differ: {a.shape} vs {b.shape}")
    lam0 = float(rng.beta(alpha, alpha))
    box = sample_cut_box(a.shape[1], a.shape[2], lam0, rng)
    return paste_box(a, b, box)


def emb_noise(
    e: np.ndarray,
    sigma_channel: float,
    sigma_full: float,
    prob: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Channel-broadcast Gaussian noise followed by full-shape iid noise.

    Applied with the given probability; otherwise the input is returned
    unchanged.
    """
    if sigma_channel < 0 or sigma_full < 0:
        raise InputError("noise scales must be >= 0")
    if rng.random() >= prob:
        return e
    d_c = e.shape[0]
    per_channel = rng.normal(0.0, sigma_channel, size=d_c)
    full = rng.normal(0.0, sigma_full, size=e.shape)
    out = e.astype(np.float64) + per_channel[:, None, None] + full
    return out.astype(e.dtype)


# -- tensor dump -------------------------------------------------------------
#
# Golden-file format shared with foreign-language consumers: four u32
# dimensions, then the row-major float32 payload.

_DUMP_HEADER = struct.Struct("<IIII")


def write_f32_tensor(path_or_file, arr: np.ndarray) -> None:
    a = np.asarray(arr)
    if a.ndim != 4:
        raise InputError(f"dump tensors must have 4 dimensions, got {a.ndim}")
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "wb") if own else path_or_file
    try:
        f.write(_DUMP_HEADER.pack(*a.shape))
        f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    finally:
        if own:
            f.close()


def read_f32_tensor(path_or_file) -> np.ndarray:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "rb") if own else path_or_file
    try:
        head = f.read(_DUMP_HEADER.size)
        if len(head) < _DUMP_HEADER.size:
            raise InputError("tensor dump too small for its header")
        shape = _DUMP_HEADER.unpack(head)
        count = int(np.prod(shape))
        body = f.read(4 * count)
        if len(body) != 4 * count:
            raise InputError("tensor dump body does not match its header")
        return np.frombuffer(body, dtype="<f4").reshape(shape).copy()
    finally:
        if own:
            f.close()
