import io

import numpy as np
import pytest

from stok import augment as aug
from stok.codebook import Codebook, build_synonyms
from stok.errors import InputError


class FixedRng:
    """Stand-in generator with scripted outputs, for forcing rare paths."""

    def __init__(self, randoms=(), integers=()):
        self._randoms = list(randoms)
        self._integers = list(integers)

    def random(self, size=None):
        v = self._randoms.pop(0)
        return np.full(size, v) if size is not None else v

    def integers(self, low, high=None, size=None):
        v = self._integers.pop(0)
        return np.full(size, v, dtype=np.int64) if size is not None else v


def keys_cubic(x):
    """Reference Keys kernel, a = -0.5, scalar."""
    x = abs(x)
    if x <= 1:
        return 1.5 * x**3 - 2.5 * x**2 + 1
    if x < 2:
        return -0.5 * (x**3 - 5 * x**2 + 8 * x - 4)
    return 0.0


def naive_bicubic(img, out_h, out_w):
    """Per-pixel reference resize: half-pixel centers, mirrored edges."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))

    def reflect(i, n):
        if n == 1:
            return 0
        period = 2 * n - 2
        i %= period
        return period - i if i >= n else i

    for y in range(out_h):
        sy = (y + 0.5) * h / out_h - 0.5
        by = int(np.floor(sy))
        for x in range(out_w):
            sx = (x + 0.5) * w / out_w - 0.5
            bx = int(np.floor(sx))
            acc = 0.0
            for dy in range(-1, 3):
                wy = keys_cubic(sy - (by + dy))
                for dx in range(-1, 3):
                    wx = keys_cubic(sx - (bx + dx))
                    acc += wy * wx * img[reflect(by + dy, h), reflect(bx + dx, w)]
            out[y, x] = acc
    return out


class TestConfig:
    def test_defaults_cover_documented_values(self):
        cfg = aug.AugmentConfig()
        assert cfg.p_s == 0.25 and cfg.p_r == 0.25
        assert cfg.rrc_scale == (0.08, 1.0)
        assert cfg.rrc_ratio == (0.75, 4.0 / 3.0)
        assert cfg.m == 28 and cfg.cutmix_prob == 1.0 and cfg.noise_prob == 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"p_s": 1.5},
            {"p_r": -0.1},
            {"rrc_scale": (1.0, 0.5)},
            {"rrc_ratio": (2.0, 1.0)},
            {"sigma_full": -1.0},
            {"m": 0},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(InputError):
            aug.AugmentConfig(**kwargs)

    def test_sigma_defaults_track_codebook_spread(self):
        cb = Codebook(vectors=np.vstack([np.zeros(5), np.arange(5.0)]).astype(np.float32))
        sc, sf = aug.AugmentConfig().resolve_sigmas(cb)
        expected = 0.1 * np.mean([0.0, np.std(np.arange(5.0))])
        assert sc == pytest.approx(expected) and sf == pytest.approx(expected)
        sc, _ = aug.AugmentConfig(sigma_channel=0.7).resolve_sigmas(cb)
        assert sc == 0.7


class TestSynonymReplacement:
    def test_p_zero_is_identity(self, codebook, rng):
        grid = rng.integers(0, 391, size=(32, 32))
        syn = build_synonyms(codebook, 5)
        out = aug.token_eda_sr(grid, syn, 0.0, np.random.default_rng(0))
        assert np.array_equal(out, grid)

    def test_p_one_two_codes_flips_everything(self):
        cb = Codebook(vectors=np.array([[0.0, 1.0]], dtype=np.float32))
        syn = build_synonyms(cb, 5)
        grid = np.array([[0, 1], [1, 0]])
        out = aug.token_eda_sr(grid, syn, 1.0, np.random.default_rng(0))
        assert np.array_equal(out, 1 - grid)

    def test_single_code_vocab_is_noop(self):
        cb = Codebook(vectors=np.array([[2.0]], dtype=np.float32))
        syn = build_synonyms(cb, 5)
        grid = np.zeros((4, 4), dtype=int)
        out = aug.token_eda_sr(grid, syn, 1.0, np.random.default_rng(0))
        assert np.array_equal(out, grid)

    def test_replacement_rate_binomial(self, codebook):
        syn = build_synonyms(codebook, 5)
        rng = np.random.default_rng(5)
        changed = 0
        trials = 200
        for _ in range(trials):
            grid = rng.integers(0, 391, size=(32, 32))
            out = aug.token_eda_sr(grid, syn, 0.25, rng)
            changed += int(np.sum(out != grid))
        mean = changed / trials
        sigma = np.sqrt(1024 * 0.25 * 0.75)
        assert abs(mean - 256) < 5 * sigma / np.sqrt(trials)

    def test_replacements_come_from_synonym_lists(self, codebook, rng):
        syn = build_synonyms(codebook, 5)
        grid = rng.integers(0, 391, size=(32, 32))
        out = aug.token_eda_sr(grid, syn, 0.5, rng)
        hit = out != grid
        for before, after in zip(grid[hit], out[hit]):
            assert after in syn.neighbors[before]


class TestRandomSwap:
    def test_p_zero_is_identity(self, rng):
        grid = rng.integers(0, 9, size=(8, 8))
        assert np.array_equal(aug.token_eda_rs(grid, 0.0, np.random.default_rng(0)), grid)

    def test_hand_traced_swap(self):
        grid = np.array([["a", "b"], ["c", "d"]], dtype=object)
        out = aug.swap_squares(grid.copy(), (0, 0), (1, 1), 1)
        assert out.tolist() == [["d", "b"], ["c", "a"]]

    def test_multiset_preserved(self, rng):
        for _ in range(50):
            grid = rng.integers(0, 50, size=(16, 16))
            out = aug.token_eda_rs(grid, 1.0, rng)
            assert sorted(out.ravel()) == sorted(grid.ravel())

    def test_swapped_regions_do_not_overlap(self):
        # forced corners (0,0) and (0,1) with side 2 overlap; the third
        # attempt at (4,4) succeeds
        rng = FixedRng(randoms=[0.0], integers=[2, 0, 0, 0, 1, 0, 0, 4, 4])
        grid = np.arange(64).reshape(8, 8)
        out = aug.token_eda_rs(grid, 1.0, rng)
        expect = aug.swap_squares(grid.copy(), (0, 0), (4, 4), 2)
        assert np.array_equal(out, expect)

    def test_rejection_exhaustion_skips_and_counts(self):
        class Stats:
            rs_skips = 0

        rng = FixedRng(randoms=[0.0], integers=[2] + [0, 0, 0, 1] * 100)
        grid = np.arange(64).reshape(8, 8)
        stats = Stats()
        out = aug.token_eda_rs(grid, 1.0, rng, stats)
        assert np.array_equal(out, grid)
        assert stats.rs_skips == 1

    def test_tiny_grid_rejected(self):
        with pytest.raises(InputError):
            aug.token_eda_rs(np.zeros((1, 1), int), 1.0, np.random.default_rng(0))


class TestOneHot:
    def test_constant_grid(self):
        oh = aug.one_hot(np.full((4, 4), 3), 10)
        assert np.all(oh[3] == 1)
        assert oh.sum() == 16

    def test_channel_sum_one(self, rng):
        grid = rng.integers(0, 17, size=(6, 5))
        oh = aug.one_hot(grid, 17)
        assert np.all(oh.sum(axis=0) == 1)

    def test_argmax_inverts(self, rng):
        grid = rng.integers(0, 17, size=(6, 5))
        assert np.array_equal(np.argmax(aug.one_hot(grid, 17), axis=0), grid)

    def test_out_of_range_rejected(self):
        with pytest.raises(InputError):
            aug.one_hot(np.array([[5]]), 5)


class TestResize:
    def test_identity(self, rng):
        img = rng.random((3, 9, 9))
        assert np.array_equal(aug.resize_bicubic(img, 9, 9), img)

    def test_matches_naive_reference(self, rng):
        img = rng.random((2, 7, 5))
        fast = aug.resize_bicubic(img, 9, 4)
        for c in range(2):
            slow = naive_bicubic(img[c], 9, 4)
            assert np.allclose(fast[c], slow, atol=1e-12)

    def test_constant_field_is_fixed(self):
        img = np.full((1, 32, 32), 1.0, dtype=np.float32)
        out = aug.resize_bicubic(img, 28, 28)
        assert np.all(out == 1.0)


class TestTokenRrc:
    def test_identity_configuration(self, rng):
        oh = aug.one_hot(rng.integers(0, 30, size=(16, 16)), 30)
        cfg = aug.AugmentConfig(rrc_scale=(1.0, 1.0), rrc_ratio=(1.0, 1.0), m=16)
        out = aug.token_rrc(oh, cfg, np.random.default_rng(0))
        assert np.array_equal(out, oh)

    def test_constant_grid_fixpoint(self, rng):
        oh = aug.one_hot(np.full((32, 32), 17), 40)
        cfg = aug.AugmentConfig(m=28)
        out = aug.token_rrc(oh, cfg, np.random.default_rng(3))
        assert np.array_equal(out, aug.one_hot(np.full((28, 28), 17), 40))

    def test_channel_sum_within_tolerance(self, rng):
        oh = aug.one_hot(rng.integers(0, 64, size=(32, 32)), 64)
        cfg = aug.AugmentConfig(m=28)
        for seed in range(5):
            out = aug.token_rrc(oh, cfg, np.random.default_rng(seed))
            assert np.all(np.abs(out.sum(axis=0) - 1.0) < 1e-5)

    def test_fallback_is_ratio_clamped_center_crop(self):
        # an impossible aspect range forces all 10 attempts to fail
        top, left, ch, cw = aug.sample_rrc_box(32, 32, (0.999, 1.0), (4.0, 4.0), np.random.default_rng(0))
        assert (ch, cw) == (8, 32)
        assert (top, left) == (12, 0)

    def test_deterministic_per_seed(self, rng):
        oh = aug.one_hot(rng.integers(0, 64, size=(32, 32)), 64)
        cfg = aug.AugmentConfig(m=28)
        a = aug.token_rrc(oh, cfg, np.random.default_rng(11))
        b = aug.token_rrc(oh, cfg, np.random.default_rng(11))
        assert np.array_equal(a, b)


class TestRenormalize:
    def test_unit_channel_sums(self, rng):
        oh = aug.one_hot(rng.integers(0, 64, size=(32, 32)), 64)
        cfg = aug.AugmentConfig(m=28)
        out = aug.renormalize_weights(aug.token_rrc(oh, cfg, np.random.default_rng(4)))
        assert np.all(np.abs(out.sum(axis=0) - 1.0) < 1e-6)

    def test_all_zero_positions_left_alone(self):
        w = np.zeros((3, 2, 2), dtype=np.float32)
        assert np.array_equal(aug.renormalize_weights(w), w)


class TestEmbed:
    def test_pure_one_hot_returns_column(self, small_codebook, rng):
        grid = rng.integers(0, 64, size=(5, 5))
        e = aug.embed(aug.one_hot(grid, 64), small_codebook)
        assert np.allclose(e[:, 2, 3], small_codebook.vectors[:, grid[2, 3]], atol=1e-6)

    def test_half_half_midpoint(self, small_codebook):
        w = np.zeros((64, 1, 1))
        w[3, 0, 0] = 0.5
        w[9, 0, 0] = 0.5
        e = aug.embed(w, small_codebook)
        mid = (small_codebook.vectors[:, 3] + small_codebook.vectors[:, 9]) / 2
        assert np.allclose(e[:, 0, 0], mid, atol=1e-12)

    def test_linearity(self, small_codebook, rng):
        w1 = rng.random((64, 7, 7))
        w2 = rng.random((64, 7, 7))
        lhs = aug.embed(0.3 * w1 + 0.7 * w2, small_codebook)
        rhs = 0.3 * aug.embed(w1, small_codebook) + 0.7 * aug.embed(w2, small_codebook)
        assert np.abs(lhs - rhs).max() < 1e-6

    def test_channel_count_mismatch(self, small_codebook):
        with pytest.raises(InputError):
            aug.embed(np.zeros((63, 4, 4)), small_codebook)


class TestCutmix:
    def test_zero_area(self, rng):
        a, b = rng.normal(size=(2, 8, 28, 28)).astype(np.float32)
        out, lam = aug.paste_box(a, b, (5, 5, 9, 9))
        assert np.array_equal(out, a) and lam == 1.0

    def test_full_grid(self, rng):
        a, b = rng.normal(size=(2, 8, 28, 28)).astype(np.float32)
        out, lam = aug.paste_box(a, b, (0, 28, 0, 28))
        assert np.array_equal(out, b) and lam == 0.0

    def test_quarter_area(self, rng):
        a, b = rng.normal(size=(2, 8, 28, 28)).astype(np.float32)
        out, lam = aug.paste_box(a, b, (0, 14, 0, 14))
        assert lam == 1 - 196 / 784

    def test_area_law_on_sampled_boxes(self, rng):
        for _ in range(200):
            lam0 = float(rng.beta(1.0, 1.0))
            y1, y2, x1, x2 = aug.sample_cut_box(28, 28, lam0, rng)
            a = np.zeros((2, 28, 28), np.float32)
            b = np.ones((2, 28, 28), np.float32)
            out, lam = aug.paste_box(a, b, (y1, y2, x1, x2))
            assert lam == 1.0 - (y2 - y1) * (x2 - x1) / 784
            assert float(out[0].sum()) == (y2 - y1) * (x2 - x1)

    def test_all_channels_replaced(self, rng):
        a = np.zeros((4, 28, 28), np.float32)
        b = np.ones((4, 28, 28), np.float32)
        out, lam = aug.token_cutmix(a, b, 1.0, np.random.default_rng(8))
        per_channel = out.sum(axis=(1, 2))
        assert np.all(per_channel == per_channel[0])

    def test_shape_mismatch(self, rng):
        with pytest.raises(InputError):
            aug.token_cutmix(np.zeros((2, 4, 4)), np.zeros((2, 5, 5)), 1.0, rng)


class TestEmbNoise:
    def test_zero_sigmas_identity(self, rng):
        e = rng.normal(size=(8, 14, 14)).astype(np.float32)
        out = aug.emb_noise(e, 0.0, 0.0, 1.0, np.random.default_rng(0))
        assert np.array_equal(out, e)

    def test_prob_zero_identity(self, rng):
        e = rng.normal(size=(8, 14, 14)).astype(np.float32)
        out = aug.emb_noise(e, 5.0, 5.0, 0.0, np.random.default_rng(0))
        assert np.array_equal(out, e)

    def test_channel_noise_is_spatially_constant(self, rng):
        e = rng.normal(size=(8, 14, 14)).astype(np.float64)
        out = aug.emb_noise(e, 1.0, 0.0, 1.0, np.random.default_rng(1))
        delta = out - e
        assert np.allclose(delta.std(axis=(1, 2)), 0.0, atol=1e-12)
        assert not np.allclose(delta, 0.0)

    def test_full_noise_variance(self):
        e = np.zeros((4, 160, 160), dtype=np.float64)
        out = aug.emb_noise(e, 0.0, 1.0, 1.0, np.random.default_rng(2))
        assert abs(out.var() - 1.0) < 0.05

    def test_negative_sigma_rejected(self, rng):
        with pytest.raises(InputError):
            aug.emb_noise(np.zeros((2, 3, 3)), -1.0, 0.0, 1.0, rng)


class TestTensorDump:
    def test_round_trip_file(self, tmp_path, rng):
        arr = rng.normal(size=(2, 8, 14, 14)).astype(np.float32)
        path = tmp_path / "t.f32"
        aug.write_f32_tensor(path, arr)
        assert np.array_equal(aug.read_f32_tensor(path), arr)

    def test_round_trip_stream(self, rng):
        arr = rng.normal(size=(1, 3, 4, 5)).astype(np.float32)
        buf = io.BytesIO()
        aug.write_f32_tensor(buf, arr)
        buf.seek(0)
        assert np.array_equal(aug.read_f32_tensor(buf), arr)

    def test_wrong_rank_rejected(self):
        with pytest.raises(InputError):
            aug.write_f32_tensor(io.BytesIO(), np.zeros((3, 3, 3)))
