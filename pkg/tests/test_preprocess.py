import math

import numpy as np
import pytest

from csiloc.codec import CsiPacket
from csiloc.preprocess import (DatasetSplit, Fingerprint, PreprocessError,
                               encode_targets, fingerprint_from_packet,
                               magnitude_normalize, moving_average, pipeline,
                               read_dataset, split_dataset, split_indices,
                               stack_fingerprints, to_fingerprint, unit_power,
                               write_dataset)


def brute_force_movmean(v, window):
    """Independent oracle: scan every index, keep those within the centered
    (left-heavy for even windows) range, sum ascending."""
    left = window // 2
    right = window - 1 - left
    out = []
    for t in range(len(v)):
        s, c = 0.0, 0
        for u in range(len(v)):
            if -left <= u - t <= right:
                s += float(v[u])
                c += 1
        out.append(s / c)
    return np.array(out)


def random_csi(rng):
    return (rng.integers(-2000, 2000, (3, 3, 56))
            + 1j * rng.integers(-2000, 2000, (3, 3, 56))).astype(complex)


class TestMagnitudeNormalize:
    def test_all_ones_input(self):
        out = magnitude_normalize(np.ones((3, 3, 56), dtype=complex))
        assert np.allclose(out, math.sqrt(1.0 / 3.0), atol=1e-12)

    def test_per_antenna_energy_is_56(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            out = magnitude_normalize(random_csi(rng))
            energies = (out ** 2).sum(axis=(1, 2))
            assert np.allclose(energies, 56.0, atol=1e-9)

    def test_scale_invariance_per_receive_antenna(self):
        rng = np.random.default_rng(2)
        csi = random_csi(rng)
        scaled = csi.copy()
        scaled[1] *= 7.0
        a = magnitude_normalize(csi)
        b = magnitude_normalize(scaled)
        assert np.allclose(a[1], b[1], atol=1e-12)
        assert np.allclose(a[0], b[0], atol=0) and np.allclose(a[2], b[2], atol=0)

    def test_zero_antenna_slice_rejected(self):
        csi = random_csi(np.random.default_rng(3))
        csi[2] = 0.0
        with pytest.raises(PreprocessError, match="antenna 3"):
            magnitude_normalize(csi)

    def test_wrong_shape_rejected(self):
        with pytest.raises(PreprocessError):
            magnitude_normalize(np.ones((3, 3, 55), dtype=complex))


class TestUnitPower:
    def test_alternating_vector_unchanged(self):
        v = np.tile([1.0, -1.0], 28)
        assert np.array_equal(unit_power(v), v)

    def test_constant_vector_rejected(self):
        with pytest.raises(PreprocessError, match="variance"):
            unit_power(np.full(56, 3.7))

    def test_output_moments(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            out = unit_power(rng.standard_normal(56) * 13.0 + 5.0)
            assert abs(out.mean()) < 1e-9
            assert abs((out ** 2).mean() - 1.0) < 1e-9

    def test_affine_invariance(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal(56)
        base = unit_power(v)
        assert np.allclose(unit_power(2.5 * v - 4.0), base, atol=1e-9)
        assert np.allclose(unit_power(-0.3 * v + 9.0), -base, atol=1e-9)

    def test_batched_rows_match_single(self):
        rng = np.random.default_rng(6)
        stack = rng.standard_normal((3, 3, 56))
        batched = unit_power(stack)
        for i in range(3):
            for j in range(3):
                assert np.allclose(batched[i, j], unit_power(stack[i, j]), atol=1e-12)


class TestMovingAverage:
    def test_constant_vector(self):
        v = np.full(56, 2.5)
        assert np.array_equal(moving_average(v, 8), v)

    def test_impulse_at_interior_index(self):
        v = np.zeros(56)
        v[28] = 1.0
        out = moving_average(v, 8)
        expected = brute_force_movmean(v, 8)
        assert np.array_equal(out, expected)
        # eight consecutive windows cover index 28
        covered = np.flatnonzero(out)
        assert list(covered) == list(range(25, 33))
        assert np.allclose(out[covered], 1.0 / 8.0)

    def test_linear_ramp(self):
        v = np.arange(56, dtype=float)
        assert np.array_equal(moving_average(v, 8), brute_force_movmean(v, 8))

    @pytest.mark.parametrize("window", [1, 2, 3, 5, 8, 11])
    def test_matches_bruteforce_exactly(self, window):
        rng = np.random.default_rng(window)
        for _ in range(40):
            v = rng.standard_normal(56)
            assert np.array_equal(moving_average(v, window),
                                  brute_force_movmean(v, window))

    def test_bad_window(self):
        with pytest.raises(PreprocessError):
            moving_average(np.zeros(56), 0)


class TestReshape:
    def test_row_order(self):
        stack = np.zeros((3, 3, 56))
        stack[0, 0] = 5.0
        stack[2, 2] = 7.0
        image = to_fingerprint(stack)
        assert np.all(image[0] == 5.0)
        assert np.all(image[8] == 7.0)

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        stack = rng.standard_normal((3, 3, 56))
        assert np.array_equal(to_fingerprint(stack).reshape(3, 3, 56), stack)


class TestPipeline:
    def make_packet(self, rng):
        return CsiPacket.build(random_csi(rng))

    def test_valid_packet_yields_finite_fingerprint(self):
        out = pipeline(self.make_packet(np.random.default_rng(8)))
        assert out.shape == (9, 56)
        assert np.all(np.isfinite(out))

    def test_invalid_packet_rejected(self):
        rng = np.random.default_rng(9)
        p = CsiPacket.build(random_csi(rng)[:, :2, :])
        with pytest.raises(PreprocessError, match="filter"):
            pipeline(p)

    def test_deterministic(self):
        p = self.make_packet(np.random.default_rng(10))
        assert np.array_equal(pipeline(p), pipeline(p))

    def test_fingerprint_from_packet(self):
        fp = fingerprint_from_packet(self.make_packet(np.random.default_rng(11)), 38)
        assert fp.label == 38
        # label 38 -> X = 2, Y = 5 -> (0.90 m, 2.25 m)
        assert fp.position == pytest.approx((0.90, 2.25))


class TestTargets:
    def test_one_hot_for_last_label(self):
        _, onehot = encode_targets(63)
        assert onehot[-1] == 1.0 and onehot.sum() == 1.0

    def test_position_target(self):
        position, onehot = encode_targets(3)
        assert position == pytest.approx((1.35, 0.45))
        assert onehot[2] == 1.0 and onehot.sum() == 1.0

    def test_every_label_sums_to_one(self):
        for label in range(1, 64):
            _, onehot = encode_targets(label)
            assert onehot.sum() == 1.0
            assert onehot[label - 1] == 1.0


def make_fingerprints(counts, seed=0):
    rng = np.random.default_rng(seed)
    fps = []
    for label, n in counts.items():
        for _ in range(n):
            fps.append(Fingerprint(rng.standard_normal((9, 56)), label,
                                   (0.45 * label, 0.45)))
    return fps


class TestSplit:
    def test_100_per_grid_exact(self):
        fps = make_fingerprints({1: 100})
        split = split_dataset(fps, seed=3)
        assert (len(split.train), len(split.validation), len(split.test)) == (75, 10, 15)

    def test_partition_multiset(self):
        rng = np.random.default_rng(12)
        counts = {label: int(rng.integers(1, 40)) for label in range(1, 20)}
        fps = make_fingerprints(counts)
        split = split_dataset(fps, seed=4)
        merged = split.train + split.validation + split.test
        assert len(merged) == len(fps)
        assert sorted(id(fp) for fp in merged) == sorted(id(fp) for fp in fps)

    def test_stratified_per_grid(self):
        fps = make_fingerprints({1: 40, 2: 40, 3: 40})
        split = split_dataset(fps, seed=5)
        train_labels = [fp.label for fp in split.train]
        assert all(train_labels.count(label) == 30 for label in (1, 2, 3))

    def test_deterministic(self):
        fps = make_fingerprints({1: 33, 2: 17})
        a = split_dataset(fps, seed=6)
        b = split_dataset(fps, seed=6)
        assert [id(f) for f in a.train] == [id(f) for f in b.train]
        assert [id(f) for f in a.test] == [id(f) for f in b.test]

    def test_empty_rejected(self):
        with pytest.raises(PreprocessError):
            split_indices([], seed=0)

    def test_indices_campaign_scale_sizes(self):
        # 63 grids, counts summing to 89677 -> sizes near 67258/8968/13451
        counts = [1424] * 28 + [1423] * 35
        assert sum(counts) == 89677
        labels = np.repeat(np.arange(1, 64), counts)
        train, val, test = split_indices(labels, seed=7)
        assert abs(len(train) - 67258) <= 63
        assert abs(len(val) - 8968) <= 63
        assert abs(len(test) - 13451) <= 63
        assert len(train) + len(val) + len(test) == 89677


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        fps = make_fingerprints({3: 4, 11: 2}, seed=13)
        path = tmp_path / "set.csids"
        write_dataset(fps, path)
        back = read_dataset(path)
        assert len(back) == 6
        for orig, loaded in zip(fps, back):
            assert loaded.label == orig.label
            assert np.array_equal(loaded.values,
                                  orig.values.astype(np.float32).astype(float))
            assert loaded.position == pytest.approx(orig.position, abs=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.csids"
        path.write_bytes(b"WRONG!!!" + b"\x00" * 16)
        with pytest.raises(PreprocessError, match="magic"):
            read_dataset(path)

    def test_truncated(self, tmp_path):
        fps = make_fingerprints({1: 3})
        path = tmp_path / "set.csids"
        write_dataset(fps, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(PreprocessError, match="truncated"):
            read_dataset(path)

    def test_stack_fingerprints(self):
        fps = make_fingerprints({2: 3})
        x, labels, positions = stack_fingerprints(fps)
        assert x.shape == (3, 9, 56, 1)
        assert labels.tolist() == [2, 2, 2]
        assert positions.shape == (3, 2)
