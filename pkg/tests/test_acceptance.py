"""Acceptance gate: every release criterion at its stated tolerance.

Each test prints one ``ACCEPTANCE <n> <name>: PASS|FAIL`` line (visible with
``pytest -s``); the assertion failure carries the details.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import integrate

from conftest import random_model_params, symmetric_benchmark_params
from occhmm import hmm_filter as hf
from occhmm import pipeline, simulate
from occhmm import subspace as ssp
from occhmm import tracker as trk
from occhmm.config import load_run_config
from occhmm.oracle import brute_force_marginals


@contextmanager
def criterion(num: int, name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {num} {name}: FAIL")
        raise
    print(f"ACCEPTANCE {num} {name}: PASS")


def test_criterion_1_oracle_equivalence():
    with criterion(1, "oracle equivalence"):
        started = time.monotonic()
        rng = np.random.default_rng(20260810)
        worst = 0.0

        def check_instance(n_cameras: int, horizon: int) -> float:
            params = random_model_params(rng, n_cameras)
            observations = rng.uniform(0.0, 12.0, size=(horizon, n_cameras))
            reference = brute_force_marginals(observations, params)
            largest = 0.0
            for t, res in enumerate(hf.run(observations, params)):
                largest = max(
                    largest,
                    abs(res.p_change - reference.p_change[t]),
                    float(np.abs(np.asarray(res.p_occlusion) - reference.p_occlusion[t]).max()),
                )
            return largest

        for _ in range(100):
            n = int(rng.integers(1, 3))
            horizon = int(rng.integers(4, 9))
            worst = max(worst, check_instance(n, horizon))
        for _ in range(10):
            worst = max(worst, check_instance(3, 6))
        elapsed = time.monotonic() - started
        assert worst <= 1e-9, f"worst filter/oracle deviation {worst:.3e}"
        assert elapsed < 120.0, f"oracle certification took {elapsed:.1f}s"


def test_criterion_2_normalization_endurance():
    with criterion(2, "normalization endurance"):
        started = time.monotonic()
        n = 8
        params = symmetric_benchmark_params(n)
        scenario = simulate.ScenarioConfig(
            n_cameras=n, n_frames=100_000, mode="direct_z", seed=42, model_params=params
        )
        observations, _ = simulate.generate_direct_z_matrix(scenario)
        worst = 0.0
        for res in hf.run(observations, params):
            probs = res.belief.probs
            deviation = abs(float(probs.sum()) - 1.0)
            if deviation > worst:
                worst = deviation
            if not np.all(np.isfinite(probs)):
                raise AssertionError(f"non-finite belief at t={res.belief.t}")
        elapsed = time.monotonic() - started
        assert worst <= 1e-12, f"worst |sum - 1| = {worst:.3e}"
        assert elapsed < 30.0, f"endurance run took {elapsed:.1f}s"


def test_criterion_3_model_matched_detection():
    with criterion(3, "model-matched detection"):
        peaks_occlusion, peaks_change = [], []
        false_alarm_frames = total_frames = 0
        occluded = slice(191, 201)  # planted frames 192..201
        changed = slice(282, 292)  # planted frames 283..292
        allowed = np.zeros(1000, dtype=bool)
        allowed[280:294] = True  # truth interval widened by +-2 frames
        for seed in range(200):
            cfg = load_run_config(None, preset="paper-analog-direct", overrides={"seed": seed})
            observations, _ = simulate.generate_direct_z_matrix(cfg.scenario_config())
            p_change = np.empty(1000)
            p_occ0 = np.empty(1000)
            for t, res in enumerate(hf.run(observations, cfg.model_params())):
                p_change[t] = res.p_change
                p_occ0[t] = res.p_occlusion[0]
            peaks_occlusion.append(p_occ0[occluded].max())
            peaks_change.append(p_change[changed].max())
            false_alarm_frames += int(((p_change > 0.9) & ~allowed).sum())
            total_frames += 1000
        median_occlusion = float(np.median(peaks_occlusion))
        median_change = float(np.median(peaks_change))
        rate = 1000.0 * false_alarm_frames / total_frames
        assert median_occlusion >= 0.95, f"median occlusion peak {median_occlusion:.4f}"
        assert median_change >= 0.9, f"median change peak {median_change:.4f}"
        assert rate <= 1.0, f"false alarm rate {rate:.3f} per 1000 frames"


def test_criterion_4_drift_avoidance():
    with criterion(4, "drift avoidance"):
        cfg = load_run_config(None, preset="drift-demo")
        scene = simulate.render_scene(cfg.scenario_config(mode="patch"))
        _, end = scene.truth.occlusion_intervals(0)[0]
        probe_t = end + 10

        def camera0_iou(run: pipeline.TrackRunResult) -> float:
            return [r.iou for r in run.track_rows if r.camera == 0 and r.t == probe_t][0]

        fixed = pipeline.track_scenario(scene, cfg, controlled=False, fixed_lambda=0.85)
        controlled = pipeline.track_scenario(scene, cfg, controlled=True)
        fixed_iou = camera0_iou(fixed)
        controlled_iou = camera0_iou(controlled)
        assert fixed_iou < 0.2, f"fixed-rate tracker kept IoU {fixed_iou:.3f}"
        assert controlled_iou > 0.5, f"controlled tracker lost target, IoU {controlled_iou:.3f}"


def test_criterion_5_subspace_batch_equivalence():
    with criterion(5, "subspace batch equivalence"):
        rng = np.random.default_rng(6)
        basis = np.linalg.qr(rng.normal(size=(10, 2)))[0]
        mean = rng.normal(size=10)

        def samples(count):
            return mean + rng.normal(size=(count, 2)) @ basis.T

        stream = samples(200)
        space = ssp.init_from_batch(stream[:5], rank=2)
        for y in stream[5:]:
            space = ssp.update(space, y, forgetting=1.0, rank_cap=2)
        batch = ssp.init_from_batch(stream, rank=2)
        for probe in samples(50):
            incremental = ssp.residual_distance(space, probe)
            reference = ssp.residual_distance(batch, probe)
            assert abs(incremental - reference) <= 1e-6

        space = ssp.init_from_batch(rng.normal(size=(6, 12)), rank=5)
        worst = 0.0
        for _ in range(10_000):
            space = ssp.update(space, rng.normal(size=12), forgetting=0.98, rank_cap=5)
            worst = max(worst, space.orthonormality_defect())
        assert worst <= 1e-9, f"orthonormality defect {worst:.3e}"


def test_criterion_6_lambda_one_fixed_point():
    with criterion(6, "learning-rate-one fixed point"):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            k = int(rng.integers(1, 12))
            model = trk.TrackerModel(
                pos_mean=rng.normal(size=k),
                pos_var=rng.uniform(trk.VAR_FLOOR, 3.0, size=k),
                neg_mean=rng.normal(size=k),
                neg_var=rng.uniform(trk.VAR_FLOOR, 3.0, size=k),
                lam=float(rng.uniform(0.0, 1.0)),
            )
            negatives = [rng.normal(size=k) for _ in range(int(rng.integers(0, 4)))]
            updated = trk.update_model(model, rng.normal(size=k), negatives, lam=1.0)
            np.testing.assert_array_equal(updated.pos_mean, model.pos_mean)
            np.testing.assert_array_equal(updated.pos_var, model.pos_var)
            np.testing.assert_array_equal(updated.neg_mean, model.neg_mean)
            np.testing.assert_array_equal(updated.neg_var, model.neg_var)
            assert updated.lam == model.lam


def test_criterion_7_emission_sanity():
    with criterion(7, "emission sanity"):
        for mu, m_max in ((1.0, 20.0), (0.3, 7.5), (2.5, 40.0)):
            params = hf.EmissionParams(mu=mu, m_max=m_max)
            normal_mass, _ = integrate.quad(
                lambda z: hf.emission_density(z, 0, params), 0.0, np.inf
            )
            assert abs(normal_mass - 1.0) <= 1e-6
            anomalous_mass, _ = integrate.quad(
                lambda z: hf.emission_density(z, 1, params), 0.0, m_max
            )
            assert abs(anomalous_mass - 1.0) <= 1e-6

        params = symmetric_benchmark_params(2)
        previous = -1.0
        for z0 in np.linspace(0.0, 15.0, 60):
            belief = hf.step(
                params.prior, hf.ObservationVector(z=np.array([z0, 0.7])), params
            )
            current = hf.marginal_occlusion(belief, 0)
            assert current >= previous - 1e-12, f"marginal dropped at z={z0}"
            previous = current


def test_criterion_8_fusion_asymmetry():
    with criterion(8, "fusion asymmetry"):
        params = symmetric_benchmark_params(4)
        all_high = brute_force_marginals(np.full((1, 4), 10.0), params)
        one_high = brute_force_marginals(np.array([[10.0, 0.0, 0.0, 0.0]]), params)
        assert all_high.p_change[0] > one_high.p_change[0], (
            f"P[S] all-high {all_high.p_change[0]:.6f} vs "
            f"one-high {one_high.p_change[0]:.6f}"
        )
