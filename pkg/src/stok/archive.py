"""On-disk token archive with O(1) random access.

Layout (version 1, all integers little-endian):

    magic "STOK" | version u16 | M u8 | flags u8 | V u16 | d_c u16
    | n u16 | reserved u16 | N u64
    | codebook   f32 * (d_c * V)   column-major by code
    | permutation u16 * V          if FLAG_PERM
    | Huffman lengths u8 * 256     all zero when Huffman is off or N == 0
    | labels     u16 * N           if FLAG_LABELS
    | offsets    u64 * (N + 1)     payload-relative, offsets[0] == 0
    | payload

Record i's bitstream occupies payload bytes [offsets[i], offsets[i+1]),
so reading a record touches exactly that span. Writing is two-pass:
pass 1 gathers token popularity (and from it the escape-byte histogram),
pass 2 writes remapped, escape-coded, Huffman-packed records.
"""
from __future__ import annotations

import io
import os
import struct
import threading
from dataclasses import dataclass

import numpy as np

from . import codec
from .codebook import Codebook, ranking_from_counts
from .errors import CorruptionError, FormatError, InputError, TruncationError

MAGIC = b"STOK"
VERSION = 1

FLAG_HUFFMAN = 0x01
FLAG_LABELS = 0x02
FLAG_PERM = 0x04

_HEADER = struct.Struct("<4sHBBHHHHQ")


@dataclass(frozen=True)
class ArchiveHeader:
    version: int
    storage_bits: int
    flags: int
    vocab: int
    dim: int
    grid_side: int
    n_records: int

    @property
    def has_huffman(self) -> bool:
        return bool(self.flags & FLAG_HUFFMAN)

    @property
    def has_labels(self) -> bool:
        return bool(self.flags & FLAG_LABELS)

    @property
    def has_perm(self) -> bool:
        return bool(self.flags & FLAG_PERM)


def write_archive(
    records,
    cb: Codebook,
    labels=None,
    *,
    out,
    use_huffman: bool = True,
    remap: bool = True,
) -> None:
    """Pack token grids into an archive file.

    records is an (N, n, n) array or an iterable of n x n grids; an
    iterable is materialized because packing needs two passes. out is a
    path or a writable binary file. Output bytes are a pure function of
    the inputs and options.
    """
    grids = _as_grid_array(records)
    n_rec, side = grids.shape[0], grids.shape[1]
    vocab = cb.size
    if vocab > 0xFFFF or cb.dim > 0xFFFF or side > 0xFFFF:
        raise InputError("V, d_c, and n must each fit an unsigned 16-bit header field")
    if n_rec:
        lo, hi = int(grids.min()), int(grids.max())
        if lo < 0 or hi >= vocab:
            raise InputError(f"token index out of range [0, {vocab}): {lo if lo < 0 else hi}")

    label_arr = None
    if labels is not None:
        label_arr = np.asarray(labels, dtype=np.int64).reshape(-1)
        if label_arr.shape[0] != n_rec:
            raise InputError(f"got {label_arr.shape[0]} labels for {n_rec} records")
        if n_rec and (label_arr.min() < 0 or label_arr.max() >= 1 << 16):
            raise InputError("labels must fit in an unsigned 16-bit value")

    # Pass 1: popularity and, through it, the escape-byte histogram.
    counts = np.bincount(grids.reshape(-1), minlength=vocab) if n_rec else np.zeros(vocab, np.int64)
    perm = ranking_from_counts(counts) if remap else None
    ranked_counts = counts[perm.inverse] if perm is not None else counts

    table = None
    if use_huffman and counts.sum() > 0:
        table = codec.huffman_build(codec.escape_byte_counts(ranked_counts))

    flags = 0
    if use_huffman:
        flags |= FLAG_HUFFMAN
    if label_arr is not None:
        flags |= FLAG_LABELS
    if perm is not None:
        flags |= FLAG_PERM

    # Pass 2: encode records and accumulate the offset index.
    offsets = np.zeros(n_rec + 1, dtype=np.uint64)
    payload = bytearray()
    perm_lookup = perm.perm if perm is not None else None
    for i in range(n_rec):
        tokens = grids[i].reshape(-1)
        if perm_lookup is not None:
            tokens = perm_lookup[tokens]
        esc = codec.escape_encode(tokens)
        payload += codec.huffman_encode(esc, table) if table is not None else esc
        offsets[i + 1] = len(payload)

    close = False
    if isinstance(out, (str, os.PathLike)):
        out = open(out, "wb")
        close = True
    try:
        out.write(_HEADER.pack(MAGIC, VERSION, codec.STORAGE_BITS, flags, vocab, cb.dim, side, 0, n_rec))
        out.write(cb.vectors.astype("<f4").T.tobytes())  # column-major by code
        if perm is not None:
            out.write(perm.perm.astype("<u2").tobytes())
        lengths = table.lengths if table is not None else np.zeros(codec.ALPHABET, np.uint8)
        out.write(lengths.astype("u1").tobytes())
        if label_arr is not None:
            out.write(label_arr.astype("<u2").tobytes())
        out.write(offsets.astype("<u8").tobytes())
        out.write(bytes(payload))
    finally:
        if close:
            out.close()


def _as_grid_array(records) -> np.ndarray:
    if isinstance(records, np.ndarray):
        arr = records
    else:
        mats = [np.asarray(g) for g in records]
        if not mats:
            return np.empty((0, 1, 1), dtype=np.int64)
        first = mats[0].shape
        for g in mats:
            if g.shape != first:
                raise InputError(f"inconsistent grid shapes: {first} vs {g.shape}")
        arr = np.stack(mats)
    if arr.ndim == 2:  # single grid
        arr = arr[None]
    if arr.ndim != 3 or (arr.shape[0] and arr.shape[1] != arr.shape[2]):
        raise InputError(f"records must be square grids, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InputError(f"token grids must be integer, got dtype {arr.dtype}")
    return arr.astype(np.int64, copy=False)


class TokenArchive:
    """Reader over one archive file.

    Immutable after open; read_image is safe to call from many threads
    concurrently (payload access uses positioned reads when the archive
    was opened from a path).
    """

    def __init__(self, source):
        self._own_file = isinstance(source, (str, os.PathLike))
        self._file = open(source, "rb") if self._own_file else source
        self._lock = None if self._own_file else threading.Lock()
        try:
            self._load()
        except Exception:
            if self._own_file:
                self._file.close()
            raise

    def _load(self) -> None:
        f = self._file
        f.seek(0, io.SEEK_END)
        file_size = f.tell()
        f.seek(0)
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError("file too small to hold an archive header")
        magic, version, m_bits, flags, vocab, dim, side, _res, n_rec = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"unsupported archive version {version}")
        if m_bits != codec.STORAGE_BITS:
            raise FormatError(f"unsupported storage unit of {m_bits} bits")
        if vocab < 1 or dim < 1:
            raise FormatError(f"invalid vocabulary geometry V={vocab}, d_c={dim}")
        if n_rec > 0 and side < 1:
            raise FormatError("archive declares records but a zero grid side")
        self.header = ArchiveHeader(version, m_bits, flags, vocab, dim, side, n_rec)

        cb_bytes = self._read_exact(4 * dim * vocab, "codebook")
        vecs = np.frombuffer(cb_bytes, dtype="<f4").reshape(vocab, dim).T
        self.codebook = Codebook(vectors=vecs)

        self.permutation = None
        self._inverse = None
        if self.header.has_perm:
            perm = np.frombuffer(self._read_exact(2 * vocab, "permutation"), dtype="<u2").astype(np.int64)
            if np.sort(perm).tolist() != list(range(vocab)):
                raise FormatError("stored permutation is not a bijection")
            self.permutation = perm
            self._inverse = np.empty(vocab, dtype=np.int64)
            self._inverse[perm] = np.arange(vocab)

        lengths = np.frombuffer(self._read_exact(codec.ALPHABET, "Huffman lengths"), dtype=np.uint8)
        self.table = None
        if self.header.has_huffman and lengths.any():
            try:
                self.table = codec.HuffmanTable(lengths.copy())
            except InputError as e:
                raise FormatError(f"invalid Huffman lengths: {e}") from e

        self.labels = None
        if self.header.has_labels:
            self.labels = np.frombuffer(self._read_exact(2 * n_rec, "labels"), dtype="<u2").astype(np.int64)

        raw = self._read_exact(8 * (n_rec + 1), "offset index")
        offsets = np.frombuffer(raw, dtype="<u8").astype(np.int64)
        if offsets[0] != 0 or np.any(np.diff(offsets) < 0):
            raise FormatError("offset index is not non-decreasing from zero")
        self.offsets = offsets
        self.payload_start = f.tell()
        if self.payload_start + int(offsets[-1]) != file_size:
            raise FormatError(
                f"payload length {file_size - self.payload_start} does not match "
                f"offset index end {int(offsets[-1])}"
            )

    def _read_exact(self, size: int, what: str) -> bytes:
        buf = self._file.read(size)
        if len(buf) != size:
            raise FormatError(f"file truncated inside {what} section")
        return buf

    # -- random access ----------------------------------------------------

    def __len__(self) -> int:
        return self.header.n_records

    def read_image(self, i: int, original: bool = False):
        """Decode record i; returns (grid, label) with label None when absent.

        Grids come back in packed-rank index space unless original=True,
        which translates through the stored permutation.
        """
        n_rec = self.header.n_records
        if not 0 <= i < n_rec:
            raise IndexError(f"record {i} out of range [0, {n_rec})")
        start, end = int(self.offsets[i]), int(self.offsets[i + 1])
        buf = self._read_payload(start, end - start)
        side = self.header.grid_side
        want = side * side
        try:
            if self.table is not None:
                tokens = codec.decode_tokens(buf, self.table, want)
            else:
                tokens = codec.escape_decode(buf)
        except (InputError, TruncationError) as e:
            raise CorruptionError(f"record {i} failed to decode: {e}") from e
        if tokens.shape[0] != want:
            raise CorruptionError(f"record {i} decoded to {tokens.shape[0]} tokens, expected {want}")
        if tokens.size and int(tokens.max()) >= self.header.vocab:
            raise CorruptionError(f"record {i} contains token >= V={self.header.vocab}")
        if original and self._inverse is not None:
            tokens = self._inverse[tokens]
        grid = tokens.reshape(side, side).astype(np.int32)
        label = int(self.labels[i]) if self.labels is not None else None
        return grid, label

    def _read_payload(self, rel_start: int, size: int) -> bytes:
        pos = self.payload_start + rel_start
        if self._own_file:
            return os.pread(self._file.fileno(), size, pos)
        with self._lock:
            self._file.seek(pos)
            return self._file.read(size)

    def close(self) -> None:
        if self._own_file:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- accounting --------------------------------------------------------

    def stats(self) -> "StorageReport":
        """Storage accounting over the whole archive (one decode pass)."""
        h = self.header
        side = h.grid_side
        tokens_per_record = side * side
        file_size = self.payload_start + int(self.offsets[-1])
        counts = np.zeros(h.vocab, dtype=np.int64)
        escape_total = 0
        for i in range(h.n_records):
            grid, _ = self.read_image(i)
            flat = grid.reshape(-1)
            counts += np.bincount(flat, minlength=h.vocab)
            escape_total += tokens_per_record + int(np.sum(flat // codec.ESCAPE))
        n = max(h.n_records, 1)
        token_entropy = codec.entropy(counts) if counts.sum() > 0 else 0.0
        return StorageReport(
            n_records=h.n_records,
            total_bytes=file_size,
            bytes_per_record_uint16=2.0 * tokens_per_record,
            bytes_per_record_escape=escape_total / n,
            bytes_per_record_huffman=int(self.offsets[-1]) / n,
            bytes_per_record_optimal=tokens_per_record * float(np.log2(h.vocab)) / 8.0,
            bytes_per_record_entropy_bound=tokens_per_record * token_entropy / 8.0,
            entropy_bits=token_entropy,
        )


@dataclass(frozen=True)
class StorageReport:
    """Per-archive storage accounting, mirroring the CLI stats keys."""

    n_records: int
    total_bytes: int
    bytes_per_record_uint16: float
    bytes_per_record_escape: float
    bytes_per_record_huffman: float
    bytes_per_record_optimal: float
    bytes_per_record_entropy_bound: float
    entropy_bits: float

    def as_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "total_bytes": self.total_bytes,
            "bytes_per_record_uint16": self.bytes_per_record_uint16,
            "bytes_per_record_escape": self.bytes_per_record_escape,
            "bytes_per_record_huffman": self.bytes_per_record_huffman,
            "bytes_per_record_optimal": self.bytes_per_record_optimal,
            "bytes_per_record_entropy_bound": self.bytes_per_record_entropy_bound,
            "entropy_bits": self.entropy_bits,
        }


def open_archive(source) -> TokenArchive:
    """Open an archive from a path or a readable binary file object."""
    return TokenArchive(source)


# -- interchange files -----------------------------------------------------
#
# Raw token file: u64 N | u32 n | u32 V header, then N*n*n u16 values.
# Codebook file:  u32 d_c | u32 V header, then d_c*V f32, column-major by
# code. Labels travel as a bare u16 array (length gives N).

_RAW_HEADER = struct.Struct("<QII")
_CB_HEADER = struct.Struct("<II")


def write_raw_tokens(path, grids: np.ndarray, vocab: int) -> None:
    arr = _as_grid_array(grids)
    n_rec = arr.shape[0]
    side = arr.shape[1] if n_rec else 1
    if n_rec and (arr.min() < 0 or arr.max() >= vocab):
        raise InputError(f"token index out of range [0, {vocab})")
    with open(path, "wb") as f:
        f.write(_RAW_HEADER.pack(n_rec, side, vocab))
        f.write(arr.astype("<u2").tobytes())


def read_raw_tokens(path) -> tuple[np.ndarray, int]:
    """Returns (grids as (N, n, n) int32, V)."""
    with open(path, "rb") as f:
        head = f.read(_RAW_HEADER.size)
        if len(head) < _RAW_HEADER.size:
            raise FormatError("raw token file too small for its header")
        n_rec, side, vocab = _RAW_HEADER.unpack(head)
        body = f.read()
    want = 2 * n_rec * side * side
    if len(body) != want:
        raise FormatError(f"raw token file body is {len(body)} bytes, expected {want}")
    grids = np.frombuffer(body, dtype="<u2").astype(np.int32).reshape(n_rec, side, side)
    if n_rec and grids.max() >= vocab:
        raise FormatError(f"raw token file contains value >= V={vocab}")
    return grids, vocab


def write_codebook_file(path, cb: Codebook) -> None:
    with open(path, "wb") as f:
        f.write(_CB_HEADER.pack(cb.dim, cb.size))
        f.write(cb.vectors.astype("<f4").T.tobytes())


def read_codebook_file(path) -> Codebook:
    with open(path, "rb") as f:
        head = f.read(_CB_HEADER.size)
        if len(head) < _CB_HEADER.size:
            raise FormatError("codebook file too small for its header")
        dim, vocab = _CB_HEADER.unpack(head)
        body = f.read()
    if len(body) != 4 * dim * vocab:
        raise FormatError(f"codebook file body is {len(body)} bytes, expected {4 * dim * vocab}")
    vecs = np.frombuffer(body, dtype="<f4").reshape(vocab, dim).T
    return Codebook(vectors=vecs)


def write_labels_file(path, labels) -> None:
    arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= 1 << 16):
        raise InputError("labels must fit in an unsigned 16-bit value")
    with open(path, "wb") as f:
        f.write(arr.astype("<u2").tobytes())


def read_labels_file(path) -> np.ndarray:
    with open(path, "rb") as f:
        body = f.read()
    if len(body) % 2:
        raise FormatError("labels file length is not a multiple of 2")
    return np.frombuffer(body, dtype="<u2").astype(np.int64)
