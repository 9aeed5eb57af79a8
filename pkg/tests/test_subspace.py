"""Unit tests for the incremental affine-subspace model."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from occhmm import subspace as ssp


def _affine_samples(rng, mean, basis, count):
    rank = basis.shape[1]
    return mean + rng.normal(size=(count, rank)) @ basis.T


def _random_affine_model(rng, dim, rank):
    basis = np.linalg.qr(rng.normal(size=(dim, rank)))[0]
    return rng.normal(size=dim), basis


class TestInitFromBatch:
    def test_identical_patches_give_rank_zero(self):
        patch = np.array([1.0, 2.0, 3.0])
        space = ssp.init_from_batch(np.tile(patch, (3, 1)), rank=2)
        np.testing.assert_allclose(space.mean, patch)
        assert space.rank == 0
        y = np.array([2.0, 2.0, 3.0])
        assert ssp.residual_distance(space, y) == pytest.approx(np.linalg.norm(y - patch))

    def test_collinear_points(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        space = ssp.init_from_batch(pts, rank=1)
        np.testing.assert_allclose(space.mean, [1.5, 0.0])
        assert abs(space.basis[0, 0]) == pytest.approx(1.0)
        assert space.basis[1, 0] == pytest.approx(0.0, abs=1e-12)

    def test_known_rank_two_data(self):
        rng = np.random.default_rng(0)
        mean, basis = _random_affine_model(rng, 10, 2)
        space = ssp.init_from_batch(_affine_samples(rng, mean, basis, 50), rank=2)
        for probe in _affine_samples(rng, mean, basis, 20):
            assert ssp.residual_distance(space, probe) <= 1e-9

    def test_too_few_patches(self):
        with pytest.raises(ssp.InsufficientData):
            ssp.init_from_batch(np.ones((1, 4)), rank=1)

    def test_rank_clipped_with_warning(self):
        rng = np.random.default_rng(1)
        with pytest.warns(UserWarning, match="clipping"):
            space = ssp.init_from_batch(rng.normal(size=(3, 5)), rank=4)
        assert space.rank <= 2


class TestResidualDistance:
    def test_zero_at_mean(self):
        rng = np.random.default_rng(2)
        space = ssp.init_from_batch(rng.normal(size=(6, 4)), rank=2)
        assert ssp.residual_distance(space, space.mean) == 0.0

    def test_zero_along_basis(self):
        rng = np.random.default_rng(3)
        space = ssp.init_from_batch(rng.normal(size=(6, 4)), rank=2)
        y = space.mean + 3.7 * space.basis[:, 0]
        assert ssp.residual_distance(space, y) == pytest.approx(0.0, abs=1e-12)

    def test_unit_orthogonal_direction(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        space = ssp.init_from_batch(pts, rank=1)
        y = space.mean + np.array([0.0, 1.0])
        assert ssp.residual_distance(space, y) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        space = ssp.init_from_batch(np.eye(3), rank=1)
        with pytest.raises(ValueError):
            ssp.residual_distance(space, np.ones(4))

    def test_nonincreasing_in_rank(self):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(30, 8))
        probes = rng.normal(size=(10, 8))
        previous = np.full(10, np.inf)
        for rank in range(0, 6):
            space = ssp.init_from_batch(data, rank=rank)
            current = np.array([ssp.residual_distance(space, p) for p in probes])
            assert np.all(current <= previous + 1e-12)
            previous = current


class TestUpdate:
    def test_update_with_mean_only_touches_count(self):
        rng = np.random.default_rng(5)
        space = ssp.init_from_batch(rng.normal(size=(10, 6)), rank=3)
        updated = ssp.update(space, space.mean, forgetting=1.0, rank_cap=3)
        np.testing.assert_array_equal(updated.mean, space.mean)
        np.testing.assert_array_equal(updated.basis, space.basis)
        np.testing.assert_array_equal(updated.weights, space.weights)
        assert updated.effective_count == space.effective_count + 1

    def test_batch_equivalence_on_stationary_stream(self):
        rng = np.random.default_rng(6)
        mean, basis = _random_affine_model(rng, 10, 2)
        stream = _affine_samples(rng, mean, basis, 200)
        space = ssp.init_from_batch(stream[:5], rank=2)
        for y in stream[5:]:
            space = ssp.update(space, y, forgetting=1.0, rank_cap=2)
        batch = ssp.init_from_batch(stream, rank=2)
        for probe in _affine_samples(rng, mean, basis, 50):
            inc = ssp.residual_distance(space, probe)
            ref = ssp.residual_distance(batch, probe)
            assert abs(inc - ref) <= 1e-6

    def test_regime_change_residual_trend(self):
        # after the appearance jumps to a new affine model, the distance of
        # held-out new-regime probes to the adapting subspace must trend
        # strongly downward over the next 20 updates
        rng = np.random.default_rng(10)
        mean_old, basis_old = _random_affine_model(rng, 10, 2)
        mean_new, basis_new = _random_affine_model(rng, 10, 2)
        probes = _affine_samples(rng, mean_new, basis_new, 40)
        space = ssp.init_from_batch(_affine_samples(rng, mean_old, basis_old, 30), rank=2)
        trend = []
        for y in _affine_samples(rng, mean_new, basis_new, 20):
            space = ssp.update(space, y, forgetting=0.9, rank_cap=2)
            trend.append(np.mean([ssp.residual_distance(space, p) for p in probes]))
        tau = stats.kendalltau(np.arange(len(trend)), trend).statistic
        assert tau < -0.8
        assert trend[-1] < 0.5 * trend[0]

    def test_forgetting_bounds_validated(self):
        space = ssp.init_from_batch(np.eye(3), rank=1)
        with pytest.raises(ValueError):
            ssp.update(space, np.ones(3), forgetting=0.0, rank_cap=1)
        with pytest.raises(ValueError):
            ssp.update(space, np.ones(3), forgetting=1.5, rank_cap=1)

    def test_rank_cap_respected(self):
        rng = np.random.default_rng(8)
        space = ssp.init_from_batch(rng.normal(size=(4, 8)), rank=3)
        for _ in range(10):
            space = ssp.update(space, rng.normal(size=8), forgetting=0.95, rank_cap=3)
        assert space.rank <= 3


class TestGatedUpdate:
    def test_high_probability_freezes_bit_for_bit(self):
        rng = np.random.default_rng(9)
        space = ssp.init_from_batch(rng.normal(size=(6, 5)), rank=2)
        frozen = ssp.gated_update(space, rng.normal(size=5), 0.95, p_occlusion=1.0)
        assert frozen is space

    def test_zero_probability_equals_update(self):
        rng = np.random.default_rng(10)
        space = ssp.init_from_batch(rng.normal(size=(6, 5)), rank=2)
        y = rng.normal(size=5)
        gated = ssp.gated_update(space, y, 0.95, p_occlusion=0.0, rank_cap=2)
        plain = ssp.update(space, y, 0.95, rank_cap=2)
        np.testing.assert_array_equal(gated.mean, plain.mean)
        np.testing.assert_array_equal(gated.basis, plain.basis)
        np.testing.assert_array_equal(gated.weights, plain.weights)

    def test_threshold_rule(self):
        rng = np.random.default_rng(11)
        space = ssp.init_from_batch(rng.normal(size=(6, 5)), rank=2)
        assert ssp.gated_update(space, rng.normal(size=5), 0.9, p_occlusion=0.6) is space
        moved = ssp.gated_update(space, rng.normal(size=5), 0.9, p_occlusion=0.5)
        assert moved is not space

    def test_probability_range_validated(self):
        space = ssp.init_from_batch(np.eye(3), rank=1)
        with pytest.raises(ValueError):
            ssp.gated_update(space, np.ones(3), 0.9, p_occlusion=1.5)


class TestInvariants:
    def test_orthonormality_over_long_random_stream(self):
        rng = np.random.default_rng(12)
        space = ssp.init_from_batch(rng.normal(size=(6, 12)), rank=5)
        worst = 0.0
        for _ in range(10_000):
            space = ssp.update(space, rng.normal(size=12), forgetting=0.98, rank_cap=5)
            worst = max(worst, space.orthonormality_defect())
        assert worst <= 1e-9

    def test_translation_equivariance(self):
        rng = np.random.default_rng(13)
        data = rng.normal(size=(40, 7))
        shift = rng.normal(size=7)
        base = ssp.init_from_batch(data, rank=3)
        moved = ssp.init_from_batch(data + shift, rank=3)
        np.testing.assert_allclose(moved.mean, base.mean + shift, atol=1e-9)
        for probe in rng.normal(size=(10, 7)):
            a = ssp.residual_distance(base, probe)
            b = ssp.residual_distance(moved, probe + shift)
            assert abs(a - b) <= 1e-9

    def test_translation_equivariance_through_updates(self):
        rng = np.random.default_rng(14)
        data = rng.normal(size=(10, 5))
        shift = np.full(5, 2.5)
        a = ssp.init_from_batch(data[:4], rank=2)
        b = ssp.init_from_batch(data[:4] + shift, rank=2)
        for y in data[4:]:
            a = ssp.update(a, y, forgetting=0.9, rank_cap=2)
            b = ssp.update(b, y + shift, forgetting=0.9, rank_cap=2)
        probe = rng.normal(size=5)
        assert ssp.residual_distance(a, probe) == pytest.approx(
            ssp.residual_distance(b, probe + shift), abs=1e-9
        )
