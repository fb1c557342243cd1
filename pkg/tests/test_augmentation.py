import json

import numpy as np
import pytest

from pumpdown.augmentation import (
    AugmentedSet,
    SparseWeights,
    first_minute_features,
    generate_augmented,
    load_augmented,
    sample_bounded_scalar,
    sample_sparse_weights,
    save_augmented,
)
from pumpdown.decomposition import ScalarDistribution, SpeedDictionary
from pumpdown.physics import ChamberSpec, PumpDownCurve

CHAMBER = ChamberSpec(volume_m3=10.0)


def toy_dictionary(n_atoms=4, resolution=50, seed=0):
    rng = np.random.default_rng(seed)
    atoms = rng.uniform(0.1, 0.8, size=(n_atoms, resolution))
    return SpeedDictionary(atoms=atoms, resolution=resolution, epsilon=1e-3)


P0_DIST = ScalarDistribution(1000.0, 16.84, 950.0, 1050.0)
T_DIST = ScalarDistribution(333.59, 262.52, 65.0, 1100.0)


class TestSparseWeights:
    def test_single_atom_forced(self):
        rng = np.random.default_rng(0)
        w = sample_sparse_weights(1, rng)
        assert np.array_equal(w.weights, [1.0])
        assert w.nnz == 1

    def test_simplex_constraints_by_construction(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            w = sample_sparse_weights(7, rng)
            assert np.all(w.weights >= 0)
            assert abs(w.weights.sum() - 1.0) <= 1e-12
            assert 1 <= w.nnz <= 3

    def test_every_atom_eventually_selected(self):
        # coupon collector over 1e5 draws on 40 atoms
        rng = np.random.default_rng(2)
        seen = np.zeros(40, dtype=bool)
        for _ in range(100_000):
            w = sample_sparse_weights(40, rng)
            seen |= w.weights > 0
            if seen.all():
                break
        assert seen.all()

    def test_max_nnz_respected(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            w = sample_sparse_weights(10, rng, max_nnz=2)
            assert w.nnz <= 2

    def test_validation(self):
        with pytest.raises(ValueError):
            SparseWeights(np.array([0.5, 0.4]), nnz=2)  # sums to 0.9
        with pytest.raises(ValueError):
            SparseWeights(np.array([1.5, -0.5]), nnz=2)  # negative entry
        with pytest.raises(ValueError):
            SparseWeights(np.array([1.0, 0.0]), nnz=2)  # nnz mismatch


class TestSampleBoundedScalar:
    def test_degenerate_gaussian(self):
        rng = np.random.default_rng(0)
        d = ScalarDistribution(5.0, 0.0, 4.0, 6.0)
        assert all(sample_bounded_scalar(d, rng) == 5.0 for _ in range(10))

    def test_draws_within_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            x = sample_bounded_scalar(P0_DIST, rng)
            assert 950.0 <= x <= 1050.0

    def test_truncated_mean_close_to_gaussian_mean(self):
        # bounds span ~3 sigma, so truncation barely shifts the mean
        rng = np.random.default_rng(2)
        draws = [sample_bounded_scalar(P0_DIST, rng) for _ in range(100_000)]
        assert abs(np.mean(draws) - 1000.0) < 0.5

    def test_unreachable_bounds_error(self):
        rng = np.random.default_rng(3)
        d = ScalarDistribution(0.0, 1.0, 100.0, 101.0)
        with pytest.raises(ValueError, match="acceptance probability"):
            sample_bounded_scalar(d, rng)


class TestGenerateAugmented:
    def test_single_atom_zero_variance_identical_samples(self):
        d = toy_dictionary(n_atoms=1)
        p0 = ScalarDistribution(1000.0, 0.0, 950.0, 1050.0)
        t = ScalarDistribution(300.0, 0.0, 65.0, 1100.0)
        aset = generate_augmented(d, p0, t, CHAMBER, m=3, seed=1)
        first = aset.samples[0]
        for s in aset.samples[1:]:
            assert np.array_equal(s.curve.pressures_mbar, first.curve.pressures_mbar)
            assert s.p0 == first.p0 and s.pump_down_time == first.pump_down_time

    def test_sample_invariants(self):
        d = toy_dictionary()
        aset = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=50, seed=2)
        max_entry = d.atoms.max()
        for s in aset.samples:
            assert np.all(s.curve.pressures_mbar > 0)
            assert np.all(np.diff(s.curve.pressures_mbar) <= 0)
            assert 950.0 <= s.p0 <= 1050.0
            assert 65.0 <= s.pump_down_time <= 1100.0
            assert s.min_pressure == s.curve.min_pressure
            assert s.first_minute.shape == (60,)
            assert np.all(s.first_minute > 0)
            profile = d.mix(s.weights.weights)
            assert np.all(profile >= 0)
            assert profile.max() <= max_entry + 1e-12

    def test_determinism_serial_vs_parallel(self):
        d = toy_dictionary()
        a = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=64, seed=3, workers=1)
        b = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=64, seed=3, workers=8)
        for sa, sb in zip(a.samples, b.samples):
            assert np.array_equal(sa.curve.pressures_mbar, sb.curve.pressures_mbar)
            assert np.array_equal(sa.weights.weights, sb.weights.weights)
            assert sa.p0 == sb.p0 and sa.pump_down_time == sb.pump_down_time

    def test_different_seeds_differ(self):
        d = toy_dictionary()
        a = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=5, seed=4)
        b = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=5, seed=5)
        assert not np.array_equal(a.samples[0].first_minute, b.samples[0].first_minute)

    def test_short_time_distribution_errors(self):
        d = toy_dictionary()
        t_short = ScalarDistribution(40.0, 0.0, 30.0, 59.0)
        with pytest.raises(RuntimeError, match="pump-down time"):
            generate_augmented(d, P0_DIST, t_short, CHAMBER, m=1, seed=6)

    def test_feature_matrix_shapes(self):
        d = toy_dictionary()
        aset = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=7, seed=7)
        assert aset.feature_matrix().shape == (7, 60)
        assert aset.targets().shape == (7,)


class TestFullScale:
    def test_paper_scale_generation_completes(self):
        # structural check at the full 100k-sample scale; invariants are
        # verified vectorized to keep the runtime reasonable
        d = toy_dictionary(n_atoms=3, resolution=100, seed=1)
        t_dist = ScalarDistribution(333.59, 120.0, 65.0, 900.0)
        aset = generate_augmented(
            d, P0_DIST, t_dist, CHAMBER, m=100_000, seed=42, workers=8
        )
        assert len(aset) == 100_000
        feats = aset.feature_matrix()
        targets = aset.targets()
        p0s = np.array([s.p0 for s in aset.samples])
        ts = np.array([s.pump_down_time for s in aset.samples])
        weight_sums = np.array([s.weights.weights.sum() for s in aset.samples])
        assert np.all(feats > 0) and np.all(targets > 0)
        assert np.all(p0s >= 950.0) and np.all(p0s <= 1050.0)
        assert np.all(ts >= 65.0) and np.all(ts <= 900.0)
        assert np.all(np.abs(weight_sums - 1.0) <= 1e-12)


class TestFirstMinute:
    def test_exact_on_one_second_grid(self):
        times = np.arange(0.0, 120.0)
        pressures = 1000.0 * np.exp(-0.01 * times)
        curve = PumpDownCurve("c", times, pressures, CHAMBER)
        feats = first_minute_features(curve)
        assert np.allclose(feats, pressures[1:61], rtol=0, atol=0)

    def test_too_short_curve_rejected(self):
        curve = PumpDownCurve("c", [0.0, 30.0], [1000.0, 500.0], CHAMBER)
        with pytest.raises(ValueError, match="60"):
            first_minute_features(curve)


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        d = toy_dictionary()
        aset = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=5, seed=8)
        save_augmented(aset, tmp_path, d, P0_DIST, T_DIST)
        loaded = load_augmented(tmp_path, CHAMBER, n_atoms=d.n_atoms)
        assert loaded.m == 5 and loaded.seed == 8
        for s1, s2 in zip(aset.samples, loaded.samples):
            assert s2.p0 == s1.p0
            assert s2.pump_down_time == s1.pump_down_time
            assert np.array_equal(s2.weights.weights, s1.weights.weights)
            # curve pressures equal on the 9-digit serialization contract
            assert np.allclose(
                s2.curve.pressures_mbar, s1.curve.pressures_mbar, rtol=1e-8
            )

    def test_serialization_deterministic_modulo_created_at(self, tmp_path):
        d = toy_dictionary()
        aset = generate_augmented(d, P0_DIST, T_DIST, CHAMBER, m=4, seed=9)
        d1, d2 = tmp_path / "one", tmp_path / "two"
        save_augmented(aset, d1, d, P0_DIST, T_DIST)
        save_augmented(aset, d2, d, P0_DIST, T_DIST)
        for f1 in sorted(d1.glob("*.csv")):
            assert f1.read_bytes() == (d2 / f1.name).read_bytes()
        m1 = json.loads((d1 / "augmented_manifest.json").read_text())
        m2 = json.loads((d2 / "augmented_manifest.json").read_text())
        m1.pop("created_at")
        m2.pop("created_at")
        assert m1 == m2
