"""Deterministic, seekable batch production from an archive.

Every sample's randomness comes from a Generator seeded by
(seed, epoch, position-in-epoch), so output bytes are independent of
worker count and of where iteration (re)started. Grids flow through the
stages in a fixed order: synonym replacement and square swap on integer
grids, one-hot, random resized crop, codebook embedding, cut-paste
mixing, then noise; an optional stem adapter runs last.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import augment
from .adapter import StemAdapter, stem_forward
from .archive import TokenArchive
from .codebook import Codebook, build_synonyms
from .errors import ConfigError, InputError


@dataclass
class PipelineConfig:
    augment: augment.AugmentConfig = field(default_factory=augment.AugmentConfig)
    batch_size: int = 64
    epochs: int = 1
    mode: str = "train"            # "train" drops the last partial batch, "eval" keeps it
    seed: int = 0
    apply_adapter: bool = False
    num_classes: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")


@dataclass
class Batch:
    tensors: np.ndarray            # (B, d_c, m, m), or (B, d_V, k, k) after the adapter
    labels: np.ndarray | None      # (B, C) rows summing to 1; None for unlabeled archives
    epoch: int
    index: int


@dataclass
class PipelineStats:
    rs_skips: int = 0
    tokens_decoded: int = 0
    decode_seconds: float = 0.0

    @property
    def tokens_per_second(self) -> float:
        return self.tokens_decoded / self.decode_seconds if self.decode_seconds > 0 else 0.0


class TokenPipeline:
    """Iterator of Batches over an archive; also supports random seeks."""

    def __init__(self, archive: TokenArchive, config: PipelineConfig, adapter: StemAdapter | None = None):
        self.archive = archive
        self.config = config
        self.adapter = adapter
        self.stats = PipelineStats()
        if config.apply_adapter and adapter is None:
            raise ConfigError("apply_adapter is set but no adapter was given")

        aug = config.augment
        if config.mode == "eval":
            # Eval disables every stochastic stage and replaces the crop
            # with a deterministic full-grid resize.
            self._p_s, self._p_r = 0.0, 0.0
            self._cutmix_prob, self._noise_prob = 0.0, 0.0
        else:
            self._p_s, self._p_r = aug.p_s, aug.p_r
            self._cutmix_prob, self._noise_prob = aug.cutmix_prob, aug.noise_prob

        if config.mode == "train" and self._cutmix_prob > 0 and archive.labels is None:
            raise InputError("cut-paste mixing needs labels, but the archive has none")

        vocab = archive.header.vocab
        base_cb = archive.codebook
        if archive.permutation is not None:
            # Records are stored in rank space; line the codebook columns
            # up with it. Synonyms are computed in original code space
            # and translated.
            inv = np.empty(vocab, dtype=np.int64)
            inv[archive.permutation] = np.arange(vocab)
            self._cb = Codebook(vectors=base_cb.vectors[:, inv])
            self._syn = build_synonyms(base_cb, aug.synonym_count).translate(archive.permutation)
        else:
            self._cb = base_cb
            self._syn = build_synonyms(base_cb, aug.synonym_count)
        self._sigmas = aug.resolve_sigmas(self._cb)

        if archive.labels is not None:
            inferred = int(archive.labels.max()) + 1 if len(archive.labels) else 1
            self._num_classes = config.num_classes or inferred
            if int(archive.labels.max() if len(archive.labels) else -1) >= self._num_classes:
                raise InputError("archive labels exceed the configured class count")
        else:
            self._num_classes = config.num_classes

        self._epoch = 0
        self._batch_index = 0

    # -- epoch geometry ----------------------------------------------------

    @property
    def batches_per_epoch(self) -> int:
        n = len(self.archive)
        b = self.config.batch_size
        return n // b if self.config.mode == "train" else -(-n // b)

    def epoch_order(self, epoch: int) -> np.ndarray:
        """Record visit order for one epoch: a seeded shuffle in train
        mode, archive order in eval mode."""
        n = len(self.archive)
        if self.config.mode == "eval":
            return np.arange(n)
        # Key space: [seed, epoch, 0, 0] shuffles, [seed, epoch, 1, i] samples.
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, epoch, 0, 0]))
        return rng.permutation(n)

    def seek(self, epoch: int, batch_index: int) -> "TokenPipeline":
        """Position so the next batch matches a fresh run fast-forwarded
        to (epoch, batch_index)."""
        if epoch < 0 or batch_index < 0:
            raise InputError("seek targets must be non-negative")
        self._epoch, self._batch_index = epoch, batch_index
        return self

    def __iter__(self):
        return self

    def __next__(self) -> Batch:
        return self.next_batch()

    def next_batch(self) -> Batch:
        bpe = self.batches_per_epoch
        if bpe > 0 and self._batch_index >= bpe:
            self._epoch += self._batch_index // bpe
            self._batch_index %= bpe
        if bpe == 0 or self._epoch >= self.config.epochs:
            raise StopIteration
        batch = self._make_batch(self._epoch, self._batch_index)
        self._batch_index += 1
        return batch

    # -- batch assembly ------------------------------------------------------

    def _make_batch(self, epoch: int, batch_index: int) -> Batch:
        order = self.epoch_order(epoch)
        start = batch_index * self.config.batch_size
        members = order[start : start + self.config.batch_size]
        positions = range(start, start + len(members))

        if self.config.workers > 1:
            with ThreadPoolExecutor(self.config.workers) as pool:
                prepared = list(pool.map(self._prepare_sample, members, [epoch] * len(members), positions))
        else:
            prepared = [self._prepare_sample(r, epoch, p) for r, p in zip(members, positions)]

        tensors = [p[0] for p in prepared]
        labels = [p[1] for p in prepared]
        rngs = [p[2] for p in prepared]
        for p in prepared:  # merge per-sample stats on the assembling thread
            self.stats.rs_skips += p[3].rs_skips
            self.stats.tokens_decoded += p[3].tokens_decoded
            self.stats.decode_seconds += p[3].decode_seconds
        b = len(tensors)

        out_labels = None
        if labels[0] is not None:
            out_labels = np.zeros((b, self._num_classes), dtype=np.float32)

        mixed = []
        for j in range(b):
            e = tensors[j]
            rng = rngs[j]
            lam, partner = 1.0, j
            if self._cutmix_prob > 0:
                if rng.random() < self._cutmix_prob:
                    partner = int(rng.integers(0, b))
                    if partner == j:  # re-draw once, then accept identity mixing
                        partner = int(rng.integers(0, b))
                    e, lam = augment.token_cutmix(e, tensors[partner], self.config.augment.cutmix_alpha, rng)
            if out_labels is not None:
                out_labels[j, labels[j]] += lam
                out_labels[j, labels[partner]] += 1.0 - lam
            e = augment.emb_noise(e, self._sigmas[0], self._sigmas[1], self._noise_prob, rng)
            if self.config.apply_adapter:
                e = stem_forward(e, self.adapter)
            mixed.append(e.astype(np.float32, copy=False))

        return Batch(tensors=np.stack(mixed), labels=out_labels, epoch=epoch, index=batch_index)

    def _prepare_sample(self, record: int, epoch: int, position: int):
        # Sample randomness keys off the augmentation seed; the shuffle
        # keys off the pipeline seed (see epoch_order).
        rng = np.random.default_rng(np.random.SeedSequence([self.config.augment.seed, epoch, 1, position]))
        local = PipelineStats()
        t0 = time.perf_counter()
        grid, label = self.archive.read_image(int(record))
        local.decode_seconds = time.perf_counter() - t0
        local.tokens_decoded = grid.size

        if self._p_s > 0:
            grid = augment.token_eda_sr(grid, self._syn, self._p_s, rng)
        if self._p_r > 0 and grid.shape[0] >= 2:  # swaps need room for two squares
            grid = augment.token_eda_rs(grid, self._p_r, rng, local)
        weights = augment.one_hot(grid, self.archive.header.vocab, dtype=np.float32)
        if self.config.mode == "eval":
            weights = augment.resize_full(weights, self.config.augment.m)
        else:
            weights = augment.token_rrc(weights, self.config.augment, rng)
        if self.config.augment.renormalize:
            weights = augment.renormalize_weights(weights)
        emb = augment.embed(weights, self._cb)
        return emb, label, rng, local
