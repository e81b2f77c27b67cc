import io

import numpy as np
import pytest

from stok import augment
from stok.adapter import init_adapter
from stok.archive import open_archive, write_archive
from stok.codebook import Codebook
from stok.errors import ConfigError, InputError
from stok.pipeline import PipelineConfig, TokenPipeline


def build_archive(n_records=40, side=16, vocab=64, classes=10, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    cb = Codebook(vectors=rng.normal(size=(8, vocab)).astype(np.float32))
    grids = rng.integers(0, vocab, size=(n_records, side, side))
    label_arr = rng.integers(0, classes, size=n_records) if labels else None
    buf = io.BytesIO()
    write_archive(grids, cb, label_arr, out=buf)
    return open_archive(io.BytesIO(buf.getvalue()))


def collect(pipe):
    return [(b.epoch, b.index, b.tensors.tobytes(), None if b.labels is None else b.labels.tobytes()) for b in pipe]


def config(**kwargs):
    aug_kwargs = kwargs.pop("aug", {})
    aug_kwargs.setdefault("m", 14)
    return PipelineConfig(augment=augment.AugmentConfig(**aug_kwargs), **kwargs)


class TestBatches:
    def test_shapes_and_label_rows(self):
        pipe = TokenPipeline(build_archive(), config(batch_size=8, epochs=1, seed=3))
        batch = pipe.next_batch()
        assert batch.tensors.shape == (8, 8, 14, 14)
        assert batch.tensors.dtype == np.float32
        assert batch.labels.shape == (8, 10)
        assert np.allclose(batch.labels.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((batch.labels > 0).sum(axis=1) <= 2)

    def test_drop_last_vs_keep_last(self):
        a = build_archive(n_records=20)
        train = TokenPipeline(a, config(batch_size=8, epochs=1))
        assert train.batches_per_epoch == 2
        ev = TokenPipeline(a, config(batch_size=8, epochs=1, mode="eval"))
        assert ev.batches_per_epoch == 3
        sizes = [b.tensors.shape[0] for b in ev]
        assert sizes == [8, 8, 4]

    def test_exhaustion_when_batch_exceeds_records(self):
        pipe = TokenPipeline(build_archive(n_records=4), config(batch_size=64, epochs=3))
        assert pipe.batches_per_epoch == 0
        with pytest.raises(StopIteration):
            pipe.next_batch()

    def test_epoch_count_respected(self):
        pipe = TokenPipeline(build_archive(n_records=16), config(batch_size=8, epochs=2))
        batches = collect(pipe)
        assert [(e, i) for e, i, *_ in batches] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_different_epochs_use_different_orders(self):
        a = build_archive(n_records=64)
        pipe = TokenPipeline(a, config(batch_size=8, epochs=2))
        assert not np.array_equal(pipe.epoch_order(0), pipe.epoch_order(1))


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        a = build_archive()
        runs = []
        for _ in range(2):
            pipe = TokenPipeline(a, config(batch_size=8, epochs=2, seed=11))
            runs.append(collect(pipe))
        assert runs[0] == runs[1]

    def test_different_seed_differs(self):
        a = build_archive()
        one = collect(TokenPipeline(a, config(batch_size=8, epochs=1, seed=1)))
        two = collect(TokenPipeline(a, config(batch_size=8, epochs=1, seed=2)))
        assert one != two

    def test_worker_counts_agree(self):
        a = build_archive()
        serial = collect(TokenPipeline(a, config(batch_size=8, epochs=2, seed=5, workers=1)))
        threaded = collect(TokenPipeline(a, config(batch_size=8, epochs=2, seed=5, workers=8)))
        assert serial == threaded

    def test_seek_matches_fresh_run(self):
        a = build_archive()
        reference = collect(TokenPipeline(a, config(batch_size=8, epochs=3, seed=2)))
        pipe = TokenPipeline(a, config(batch_size=8, epochs=3, seed=2))
        pipe.seek(2, 1)
        got = pipe.next_batch()
        want = [r for r in reference if r[:2] == (2, 1)][0]
        assert got.tensors.tobytes() == want[2]
        assert got.labels.tobytes() == want[3]

    def test_seek_zero_is_fresh_start(self):
        a = build_archive()
        pipe = TokenPipeline(a, config(batch_size=8, epochs=1, seed=2))
        first = pipe.next_batch()
        again = TokenPipeline(a, config(batch_size=8, epochs=1, seed=2)).seek(0, 0).next_batch()
        assert first.tensors.tobytes() == again.tensors.tobytes()

    def test_seek_past_end_exhausts(self):
        pipe = TokenPipeline(build_archive(), config(batch_size=8, epochs=2))
        pipe.seek(2, 0)
        with pytest.raises(StopIteration):
            pipe.next_batch()


class TestModes:
    def test_eval_equals_identity_train(self):
        a = build_archive(n_records=24)
        ident = config(
            batch_size=24,
            epochs=1,
            seed=9,
            aug=dict(p_s=0.0, p_r=0.0, cutmix_prob=0.0, noise_prob=0.0, rrc_scale=(1.0, 1.0), rrc_ratio=(1.0, 1.0)),
        )
        train_pipe = TokenPipeline(a, ident)
        train = train_pipe.next_batch()
        ev = TokenPipeline(a, config(batch_size=24, epochs=1, seed=9, mode="eval")).next_batch()
        order = train_pipe.epoch_order(0)
        assert np.array_equal(train.tensors, ev.tensors[order])
        assert np.array_equal(train.labels, ev.labels[order])

    def test_eval_constant_archive_matches_direct_path(self):
        rng = np.random.default_rng(3)
        vocab = 16
        cb = Codebook(vectors=rng.normal(size=(4, vocab)).astype(np.float32))
        grids = np.full((6, 8, 8), 5)
        buf = io.BytesIO()
        write_archive(grids, cb, np.zeros(6, dtype=int), out=buf)
        a = open_archive(io.BytesIO(buf.getvalue()))
        batch = TokenPipeline(a, config(batch_size=6, epochs=1, mode="eval", aug=dict(m=7))).next_batch()
        rank_grid, _ = a.read_image(0)
        inv = np.empty(vocab, dtype=np.int64)
        inv[a.permutation] = np.arange(vocab)
        expect = augment.embed(
            augment.resize_full(augment.one_hot(rank_grid, vocab, np.float32), 7),
            Codebook(vectors=cb.vectors[:, inv]),
        )
        for i in range(6):
            assert np.array_equal(batch.tensors[i], expect)

    def test_eval_label_rows_are_one_hot(self):
        pipe = TokenPipeline(build_archive(), config(batch_size=8, epochs=1, mode="eval"))
        batch = pipe.next_batch()
        assert np.all((batch.labels > 0).sum(axis=1) == 1)
        assert np.allclose(batch.labels.sum(axis=1), 1.0)

    def test_unlabeled_archive(self):
        a = build_archive(labels=False)
        with pytest.raises(InputError):
            TokenPipeline(a, config(batch_size=8, epochs=1))  # train + cutmix needs labels
        ev = TokenPipeline(a, config(batch_size=8, epochs=1, mode="eval"))
        assert ev.next_batch().labels is None


class TestSeeds:
    def test_shuffle_and_augment_seeds_are_independent(self):
        a = build_archive(n_records=32)
        base = config(batch_size=32, epochs=1, seed=4)
        moved_shuffle = config(batch_size=32, epochs=1, seed=5)
        moved_augment = config(batch_size=32, epochs=1, seed=4, aug=dict(seed=9))
        one = TokenPipeline(a, base)
        two = TokenPipeline(a, moved_shuffle)
        three = TokenPipeline(a, moved_augment)
        assert not np.array_equal(one.epoch_order(0), two.epoch_order(0))
        assert np.array_equal(one.epoch_order(0), three.epoch_order(0))
        assert one.next_batch().tensors.tobytes() != three.next_batch().tensors.tobytes()

    def test_renormalized_weights_change_output(self):
        a = build_archive(n_records=16)
        raw = TokenPipeline(a, config(batch_size=16, epochs=1, seed=2)).next_batch()
        norm = TokenPipeline(a, config(batch_size=16, epochs=1, seed=2, aug=dict(renormalize=True))).next_batch()
        assert raw.tensors.shape == norm.tensors.shape
        assert not np.array_equal(raw.tensors, norm.tensors)


class TestAdapterStage:
    def test_adapter_output_shape(self):
        adp = init_adapter("conv2", 8, 12, seed=0)
        pipe = TokenPipeline(build_archive(), config(batch_size=4, epochs=1, apply_adapter=True), adapter=adp)
        batch = pipe.next_batch()
        assert batch.tensors.shape == (4, 12, 7, 7)

    def test_adapter_required_when_flagged(self):
        with pytest.raises(ConfigError):
            TokenPipeline(build_archive(), config(batch_size=4, epochs=1, apply_adapter=True))


class TestStats:
    def test_throughput_counters(self):
        pipe = TokenPipeline(build_archive(n_records=16, side=16), config(batch_size=8, epochs=1))
        list(pipe)
        assert pipe.stats.tokens_decoded == 16 * 16 * 16
        assert pipe.stats.tokens_per_second > 0
