"""Tests for config parsing/validation and the stream/trace file formats."""

from __future__ import annotations

import numpy as np
import pytest

from occhmm import hmm_filter as hf
from occhmm import io as oio
from occhmm import subspace as ssp
from occhmm.config import ConfigError, build_run_config, load_run_config, parse_config_text
from occhmm.simulate import ScenarioConfig, generate


class TestConfigParsing:
    def test_scalars_comments_blanks(self):
        text = """
        # a comment
        seed = 42
        model.emission.mu = 1.5
        model.scale_residuals = false
        subspace.mode = rebuild

        control.hysteresis_low = none
        """
        mapping = parse_config_text(text)
        assert mapping["seed"] == 42
        assert mapping["model.emission.mu"] == 1.5
        assert mapping["model.scale_residuals"] is False
        assert mapping["subspace.mode"] == "rebuild"
        assert mapping["control.hysteresis_low"] is None

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("seed 42")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2")

    def test_unknown_keys_listed(self):
        with pytest.raises(ConfigError) as err:
            build_run_config({"seed": 1, "bogus.key": 2, "another.one": 3})
        assert "another.one" in str(err.value)
        assert "bogus.key" in str(err.value)

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="must be an integer"):
            build_run_config({"seed": "abc"})
        with pytest.raises(ConfigError, match="must be a number"):
            build_run_config({"model.emission.mu": "fast"})

    def test_event_syntax(self):
        cfg = build_run_config(
            {
                "scenario.occlusion_events": "0:50:10, 1:70:5",
                "scenario.change_events": "90:10, 120",
                "scenario.n_frames": 200,
            }
        )
        assert cfg.scenario.occlusion_events == ((0, 50, 10), (1, 70, 5))
        assert cfg.scenario.change_events == ((90, 10), (120, 1))

    def test_bad_event_syntax(self):
        with pytest.raises(ConfigError, match="camera:start:duration"):
            build_run_config({"scenario.occlusion_events": "5:10"})

    def test_defaults(self):
        cfg = build_run_config({})
        assert cfg.model.n_cameras == 4
        assert cfg.model.s_chain.stay_normal == 0.99
        assert cfg.model.o_chain.stay_anomalous == 0.70
        assert cfg.control.alarm_threshold == 0.9
        assert cfg.subspace.forgetting == 0.98

    def test_per_camera_chain_override(self):
        cfg = build_run_config(
            {"model.n_cameras": 2, "model.o_chain.1.stay_normal": 0.5}
        )
        params = cfg.model_params()
        assert params.transitions.o_chains[0][0, 0] == 0.95
        assert params.transitions.o_chains[1][0, 0] == 0.5

    def test_invalid_chain_probability_rejected(self):
        with pytest.raises(ConfigError):
            build_run_config({"model.s_chain.stay_normal": 1.7})

    def test_weak_separation_warns_at_build(self):
        with pytest.warns(UserWarning, match="weakly separated"):
            build_run_config({"model.emission.m_max": 3.0})

    def test_model_params_assembly(self):
        cfg = build_run_config({"model.n_cameras": 3, "model.prior_normal_mass": 0.9})
        params = cfg.model_params()
        assert params.n_cameras == 3
        assert params.prior.probs[0] == pytest.approx(0.9)
        assert params.prior.probs.sum() == pytest.approx(1.0)

    def test_scenario_event_validation_becomes_config_error(self):
        cfg = build_run_config(
            {"scenario.n_frames": 10, "scenario.change_events": "50:2"}
        )
        with pytest.raises(ConfigError, match="outside frame range"):
            cfg.scenario_config()


class TestPresets:
    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            load_run_config(None, preset="nope")

    def test_paper_analog_patch(self):
        cfg = load_run_config(None, preset="paper-analog")
        assert cfg.model.n_cameras == 4
        assert cfg.scenario.n_frames == 1000
        assert cfg.scenario.occlusion_events == ((0, 192, 10),)
        assert cfg.scenario.change_events == ((283, 10),)

    def test_paper_analog_direct_mode_switch(self):
        cfg = load_run_config(
            None, preset="paper-analog", overrides={"scenario.mode": "direct_z"}
        )
        assert cfg.scenario.mode == "direct_z"
        assert cfg.model.emission.m_max == 20.0
        assert cfg.model.s_chain.stay_normal == 0.95

    def test_config_file_overrides_preset(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("scenario.n_frames = 500\n", encoding="utf-8")
        cfg = load_run_config(path, preset="paper-analog", overrides={
            "scenario.occlusion_events": "0:100:10",
            "scenario.change_events": "200:10",
        })
        assert cfg.scenario.n_frames == 500

    def test_missing_config_file(self):
        with pytest.raises(ConfigError, match="cannot read"):
            load_run_config("/nonexistent/path.cfg")


class TestStreamFormat:
    def test_direct_z_roundtrip_value_exact(self, tmp_path):
        cfg = ScenarioConfig(
            n_cameras=3,
            n_frames=20,
            mode="direct_z",
            seed=9,
            model_params=_tiny_params(3),
        )
        records, truth = generate(cfg)
        path = tmp_path / "stream.ndjson"
        oio.write_stream(path, records, mode="direct_z", n_cameras=3, include_truth=True)
        meta, loaded = oio.read_stream(path)
        assert meta.mode == "direct_z" and meta.n_cameras == 3
        assert len(loaded) == 20
        for orig, back in zip(records, loaded):
            np.testing.assert_array_equal(orig.z, back.z)
            assert back.s == orig.s
            np.testing.assert_array_equal(back.o, orig.o)

    def test_patch_roundtrip_value_exact(self, tmp_path):
        cfg = ScenarioConfig(n_cameras=2, n_frames=5, patch_dim=16, seed=3)
        records, _ = generate(cfg)
        path = tmp_path / "stream.ndjson"
        oio.write_stream(path, records, mode="patch", n_cameras=2, patch_dim=16)
        meta, loaded = oio.read_stream(path)
        assert meta.patch_dim == 16
        for orig, back in zip(records, loaded):
            np.testing.assert_array_equal(orig.patches, back.patches)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "s.ndjson"
        path.write_text("not json\n", encoding="utf-8")
        with pytest.raises(oio.StreamFormatError) as err:
            oio.read_stream(path)
        assert err.value.line == 1

    def test_wrong_time_index(self, tmp_path):
        path = tmp_path / "s.ndjson"
        path.write_text(
            '{"format_version": 1, "mode": "direct_z", "n_cameras": 1}\n'
            '{"t": 1, "z": [0.5]}\n'
            '{"t": 3, "z": [0.5]}\n',
            encoding="utf-8",
        )
        with pytest.raises(oio.StreamFormatError) as err:
            oio.read_stream(path)
        assert err.value.line == 3

    def test_missing_camera_field(self, tmp_path):
        path = tmp_path / "s.ndjson"
        path.write_text(
            '{"format_version": 1, "mode": "direct_z", "n_cameras": 2}\n'
            '{"t": 1, "z": [0.5]}\n',
            encoding="utf-8",
        )
        with pytest.raises(oio.StreamFormatError, match="2 entries"):
            oio.read_stream(path)

    def test_negative_residual_rejected(self, tmp_path):
        path = tmp_path / "s.ndjson"
        path.write_text(
            '{"format_version": 1, "mode": "direct_z", "n_cameras": 1}\n'
            '{"t": 1, "z": [-0.5]}\n',
            encoding="utf-8",
        )
        with pytest.raises(oio.StreamFormatError, match=">= 0"):
            oio.read_stream(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "s.ndjson"
        path.write_text('{"format_version": 99, "mode": "patch", "n_cameras": 1}\n', encoding="utf-8")
        with pytest.raises(oio.StreamFormatError, match="format_version"):
            oio.read_stream(path)

    def test_empty_stream_rejected(self, tmp_path):
        path = tmp_path / "s.ndjson"
        path.write_text('{"format_version": 1, "mode": "patch", "n_cameras": 1}\n', encoding="utf-8")
        with pytest.raises(oio.StreamFormatError, match="no records"):
            oio.read_stream(path)


class TestTraceFormats:
    def test_truth_roundtrip(self, tmp_path):
        s = np.array([0, 0, 1, 1, 0])
        o = np.array([[0, 1, 1, 0, 0], [0, 0, 0, 0, 1]])
        path = tmp_path / "truth.csv"
        oio.write_truth_csv(path, s, o)
        s2, o2 = oio.read_truth_csv(path)
        np.testing.assert_array_equal(s, s2)
        np.testing.assert_array_equal(o, o2)

    def test_posterior_roundtrip(self, tmp_path):
        rows = [
            oio.PosteriorRow(t=1, p_change=1 / 3, p_occlusion=(0.25, 0.75), lambdas=(0.85, 1.0), alarm=0),
            oio.PosteriorRow(t=2, p_change=0.9999999999999991, p_occlusion=(0.1, 0.2), lambdas=(1.0, 1.0), alarm=1),
        ]
        path = tmp_path / "post.csv"
        oio.write_posteriors_csv(path, rows, n_cameras=2)
        back = oio.read_posteriors_csv(path)
        assert back == rows

    def test_beliefs_csv_layout(self, tmp_path):
        belief = hf.uniform_prior(2)
        path = tmp_path / "beliefs.csv"
        oio.write_beliefs_csv(path, [belief])
        line = path.read_text(encoding="utf-8").strip().split(",")
        assert len(line) == 1 + 8
        assert float(line[1]) == 0.125

    def test_track_roundtrip(self, tmp_path):
        rows = [
            oio.TrackRow(t=1, camera=0, x=5, y=6, w=8, h=8, score=1.5, iou=0.875, z=0.125,
                         p_occlusion=0.5, lam=0.85, alarm=0)
        ]
        path = tmp_path / "track.csv"
        oio.write_track_csv(path, rows)
        assert oio.read_track_csv(path) == rows

    def test_subspace_snapshot_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        space = ssp.init_from_batch(rng.normal(size=(10, 6)), rank=3)
        path = tmp_path / "space.txt"
        oio.write_subspace_snapshot(path, space)
        back = oio.read_subspace_snapshot(path)
        np.testing.assert_array_equal(back.mean, space.mean)
        np.testing.assert_array_equal(back.basis, space.basis)
        np.testing.assert_array_equal(back.weights, space.weights)
        assert back.effective_count == space.effective_count

    def test_rank_zero_snapshot_roundtrip(self, tmp_path):
        space = ssp.init_from_batch(np.ones((3, 4)), rank=2)
        assert space.rank == 0
        path = tmp_path / "space.txt"
        oio.write_subspace_snapshot(path, space)
        back = oio.read_subspace_snapshot(path)
        assert back.rank == 0
        np.testing.assert_array_equal(back.mean, space.mean)


def _tiny_params(n):
    return hf.ModelParams(
        emission=hf.EmissionParams(mu=1.0, m_max=20.0),
        transitions=hf.TransitionParams(
            s_chain=hf.chain_matrix(0.9, 0.9),
            o_chains=tuple(hf.chain_matrix(0.9, 0.9) for _ in range(n)),
            prior=hf.default_prior(n),
        ),
    )
