"""Escape-byte token coding and the canonical Huffman stage.

Token indices are flattened to bytes with an escape scheme: value 255 is
a sentinel meaning "add 255 and keep reading", so an index i becomes
(i // 255) sentinel bytes followed by the terminator byte i % 255. Every
byte below 255 ends exactly one token, which is what lets a decoder stop
after a known token count without a stored length.

The byte stream is then entropy-coded with a canonical Huffman code over
the 256 byte values. Bitstream convention (normative, covered by golden
tests): most-significant-bit first within each byte, canonical codes
assigned in (length, symbol) order, final partial byte zero-padded.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import InputError, TruncationError

ESCAPE = 255          # sentinel byte value and escape threshold
STORAGE_BITS = 8      # bits per storage unit; v1 supports bytes only
ALPHABET = 256

_MAX_LUT_BITS = 15    # decode LUTs above this fall back to the bit walker


def escape_encode(tokens) -> bytes:
    """Flatten non-negative token indices into escape-coded bytes."""
    t = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if t.size == 0:
        return b""
    if t.min() < 0:
        raise InputError("token indices must be non-negative")
    n_units = t // ESCAPE + 1  # escapes plus one terminator per token
    ends = np.cumsum(n_units)
    out = np.full(int(ends[-1]), ESCAPE, dtype=np.uint8)
    out[ends - 1] = (t % ESCAPE).astype(np.uint8)
    return out.tobytes()


def escape_decode(data) -> np.ndarray:
    """Exact inverse of escape_encode; returns int64 token values."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    if arr.size == 0:
        return np.empty(0, dtype=np.int64)
    if arr[-1] == ESCAPE:
        raise TruncationError("byte stream ends inside an escape run")
    is_term = arr != ESCAPE
    term_pos = np.flatnonzero(is_term)
    esc_cum = np.cumsum(~is_term)[term_pos]
    runs = np.diff(esc_cum, prepend=0)
    return arr[term_pos].astype(np.int64) + ESCAPE * runs


def entropy(counts) -> float:
    """Shannon entropy in bits/symbol of the normalized count vector."""
    c = np.asarray(counts, dtype=np.float64).reshape(-1)
    if c.size == 0 or np.any(c < 0):
        raise InputError("counts must be a non-empty, non-negative vector")
    total = c.sum()
    if total <= 0:
        raise InputError("counts must not be all zero")
    p = c[c > 0] / total
    return float(-np.sum(p * np.log2(p)))


@dataclass(frozen=True, eq=False)
class HuffmanTable:
    """Canonical code lengths for the 256 byte symbols; 0 marks absence.

    Codes are implied by the lengths alone: sort present symbols by
    (length, symbol), assign consecutive code values, left-shifting at
    each length increase.
    """

    lengths: np.ndarray  # (256,) uint8

    def __post_init__(self):
        lens = np.asarray(self.lengths, dtype=np.uint8).reshape(-1)
        if lens.shape != (ALPHABET,):
            raise InputError(f"expected {ALPHABET} code lengths, got {lens.shape}")
        if not np.any(lens):
            raise InputError("table has no symbols")
        kraft = np.sum(2.0 ** -lens[lens > 0].astype(np.float64))
        if kraft > 1.0 + 1e-12:
            raise InputError(f"code lengths violate the Kraft inequality (sum={kraft:.6f})")
        object.__setattr__(self, "lengths", lens)

    def codes(self) -> dict[int, tuple[int, int]]:
        """symbol -> (code value, bit length), canonical assignment."""
        present = [(int(l), s) for s, l in enumerate(self.lengths) if l > 0]
        present.sort()
        out: dict[int, tuple[int, int]] = {}
        code = 0
        prev_len = present[0][0]
        for length, sym in present:
            code <<= length - prev_len
            out[sym] = (code, length)
            code += 1
            prev_len = length
        return out

    @property
    def max_length(self) -> int:
        return int(self.lengths.max())


def huffman_build(byte_counts) -> HuffmanTable:
    """Optimal canonical code lengths for the given byte frequencies.

    A lone present symbol still gets a 1-bit code so the stream is
    non-empty and self-terminating.
    """
    counts = np.asarray(byte_counts, dtype=np.int64).reshape(-1)
    if counts.shape[0] != ALPHABET:
        raise InputError(f"expected {ALPHABET} byte counts, got {counts.shape[0]}")
    if np.any(counts < 0):
        raise InputError("byte counts must be non-negative")
    present = np.flatnonzero(counts)
    if present.size == 0:
        raise InputError("byte counts must not be all zero")
    lengths = np.zeros(ALPHABET, dtype=np.uint8)
    if present.size == 1:
        lengths[present[0]] = 1
        return HuffmanTable(lengths)

    # Heap entries: (frequency, insertion order, leaf symbols). The order
    # term pins tie-breaks so builds are reproducible.
    heap = [(int(counts[s]), i, [int(s)]) for i, s in enumerate(present)]
    heapq.heapify(heap)
    order = len(heap)
    depth = np.zeros(ALPHABET, dtype=np.int64)
    while len(heap) > 1:
        fa, _, la = heapq.heappop(heap)
        fb, _, lb = heapq.heappop(heap)
        merged = la + lb
        depth[merged] += 1
        heapq.heappush(heap, (fa + fb, order, merged))
        order += 1
    lengths[present] = depth[present]
    return HuffmanTable(lengths)


class _Coder:
    """Derived encode/decode tables for one HuffmanTable, built lazily."""

    def __init__(self, table: HuffmanTable):
        self.lengths = table.lengths.astype(np.int64)
        codes = table.codes()
        maxlen = table.max_length
        self.maxlen = maxlen
        # Encoder: per-symbol MSB-first bit rows, masked to each length.
        bitmat = np.zeros((ALPHABET, maxlen), dtype=np.uint8)
        for sym, (code, length) in codes.items():
            for i in range(length):
                bitmat[sym, i] = (code >> (length - 1 - i)) & 1
        self.bitmat = bitmat
        # Decoder: either a flat window LUT or canonical first-code ranges.
        self.lut_bits = maxlen if maxlen <= _MAX_LUT_BITS else 0
        if self.lut_bits:
            size = 1 << self.lut_bits
            lut_sym = np.zeros(size, dtype=np.int64)
            lut_len = np.zeros(size, dtype=np.int64)
            for sym, (code, length) in codes.items():
                shift = self.lut_bits - length
                base = code << shift
                lut_sym[base : base + (1 << shift)] = sym
                lut_len[base : base + (1 << shift)] = length
            self.lut_sym = lut_sym.tolist()
            self.lut_len = lut_len.tolist()
        else:
            by_len: dict[int, list[tuple[int, int]]] = {}
            for sym, (code, length) in codes.items():
                by_len.setdefault(length, []).append((code, sym))
            self.ranges = {
                length: (min(c for c, _ in items), {c: s for c, s in items})
                for length, items in by_len.items()
            }

    def window_values(self, data: bytes) -> tuple[list, int]:
        """Sliding lut_bits-wide window value at every bit offset."""
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
        nbits = bits.shape[0]
        w = self.lut_bits
        padded = np.concatenate([bits, np.zeros(w, dtype=np.uint8)])
        windows = np.lib.stride_tricks.sliding_window_view(padded, w)[: nbits + 1]
        weights = 1 << np.arange(w - 1, -1, -1, dtype=np.int64)
        return (windows @ weights).tolist(), nbits


def huffman_encode(data, table: HuffmanTable) -> bytes:
    """Encode bytes to an MSB-first bitstream, zero-padded to a byte."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    if arr.size == 0:
        return b""
    coder = _coder_for(table)
    lens = coder.lengths[arr]
    if not lens.all():
        bad = int(arr[np.argmin(lens)])
        raise InputError(f"byte {bad} has no code in the table")
    rows = coder.bitmat[arr]
    mask = np.arange(coder.maxlen) < lens[:, None]
    return np.packbits(rows[mask]).tobytes()


def huffman_decode(data, table: HuffmanTable, expected_len: int) -> bytes:
    """Decode exactly expected_len symbols from an MSB-first bitstream."""
    syms = _decode_symbols(bytes(data), table, n_symbols=expected_len)
    return bytes(syms)


def _decode_symbols(
    data: bytes, table: HuffmanTable, n_symbols: int = -1, n_tokens: int = -1
) -> bytearray:
    """Shared decode loop; stops after n_symbols, or after n_tokens
    terminator bytes (any value below the escape sentinel)."""
    out = bytearray()
    if n_symbols == 0 or n_tokens == 0:
        return out
    coder = _coder_for(table)
    if coder.lut_bits:
        vals, nbits = coder.window_values(data)
        lut_sym, lut_len = coder.lut_sym, coder.lut_len
        pos = 0
        remaining = n_symbols if n_symbols >= 0 else n_tokens
        by_tokens = n_tokens >= 0
        append = out.append
        while remaining > 0:
            if pos >= nbits:
                raise TruncationError("bitstream exhausted before decode completed")
            v = vals[pos]
            length = lut_len[v]
            if length == 0 or pos + length > nbits:
                raise TruncationError("bitstream exhausted before decode completed")
            sym = lut_sym[v]
            append(sym)
            pos += length
            if by_tokens:
                if sym != ESCAPE:
                    remaining -= 1
            else:
                remaining -= 1
        return out
    return _decode_symbols_slow(data, coder, n_symbols, n_tokens, out)


def _decode_symbols_slow(data, coder, n_symbols, n_tokens, out):
    # Canonical range walk, one bit at a time; only reached for tables
    # with codes longer than the LUT limit.
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8)).tolist()
    nbits = len(bits)
    pos = 0
    remaining = n_symbols if n_symbols >= 0 else n_tokens
    by_tokens = n_tokens >= 0
    while remaining > 0:
        code = 0
        length = 0
        while True:
            if pos >= nbits:
                raise TruncationError("bitstream exhausted before decode completed")
            code = (code << 1) | bits[pos]
            pos += 1
            length += 1
            entry = coder.ranges.get(length)
            if entry is not None and code in entry[1]:
                sym = entry[1][code]
                break
            if length > coder.maxlen:
                raise TruncationError("bitstream exhausted before decode completed")
        out.append(sym)
        if by_tokens:
            if sym != ESCAPE:
                remaining -= 1
        else:
            remaining -= 1
    return out


_coder_cache: dict[int, tuple[bytes, _Coder]] = {}


def _coder_for(table: HuffmanTable) -> _Coder:
    key = id(table)
    fingerprint = table.lengths.tobytes()
    hit = _coder_cache.get(key)
    if hit is not None and hit[0] == fingerprint:
        return hit[1]
    coder = _Coder(table)
    _coder_cache[key] = (fingerprint, coder)
    if len(_coder_cache) > 64:
        _coder_cache.pop(next(iter(_coder_cache)))
    return coder


@dataclass(frozen=True)
class EncodedRecord:
    """One image's Huffman bitstream plus its pre-Huffman byte length."""

    payload: bytes
    escape_len: int


def encode_image(tokens, table: HuffmanTable) -> EncodedRecord:
    """Escape-encode one image's tokens and Huffman-pack the bytes."""
    esc = escape_encode(tokens)
    return EncodedRecord(payload=huffman_encode(esc, table), escape_len=len(esc))


def decode_image(record: EncodedRecord, table: HuffmanTable) -> np.ndarray:
    """Inverse of encode_image."""
    esc = huffman_decode(record.payload, table, record.escape_len)
    return escape_decode(esc)


def decode_tokens(payload: bytes, table: HuffmanTable, n_tokens: int) -> np.ndarray:
    """Decode a record's bitstream until n_tokens tokens are recovered.

    Used by archive readers, which know the grid size but not the
    record's escape-byte length.
    """
    syms = _decode_symbols(payload, table, n_tokens=n_tokens)
    return escape_decode(bytes(syms))


def escape_byte_counts(token_counts) -> np.ndarray:
    """Byte histogram of the escape encoding, from token-value counts.

    A token value v contributes v // 255 sentinel bytes and one
    terminator v % 255, so the histogram follows from the counts alone.
    """
    c = np.asarray(token_counts, dtype=np.int64).reshape(-1)
    values = np.arange(c.shape[0], dtype=np.int64)
    out = np.zeros(ALPHABET, dtype=np.int64)
    np.add.at(out, values % ESCAPE, c)
    out[ESCAPE] = int(np.sum((values // ESCAPE) * c))
    return out
