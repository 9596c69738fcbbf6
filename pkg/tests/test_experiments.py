"""Pipeline tests: configuration, locking, artifacts, determinism.

Quality gates (quadrature emergence, eigenmovie consistency, accuracy
orderings) live in test_acceptance.py; these tests run tiny configurations
and check wiring.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from warpcode.errors import ConfigError, LockError
from warpcode.experiments import (
    ExperimentConfig,
    build_shift_bank,
    output_lock,
    parse_config_file,
    run_detector_oracle,
    run_fig2,
    run_fig3,
    run_fig4,
    shift_readout_pool,
    thread_cap,
)
from warpcode.storage import read_csv


TINY_FIG2 = {
    "width": 9,
    "height": 9,
    "n_pairs": 150,
    "n_factors": 8,
    "n_mappings": 4,
    "epochs": 3,
    "batch_size": 25,
}


class TestConfig:
    def test_defaults_and_overrides(self, tmp_path):
        cfg = ExperimentConfig.build(
            "fig2", tmp_path, seed=7, overrides={"n_factors": 16}
        )
        assert cfg.params["n_factors"] == 16
        assert cfg.params["family"] == "rotation"
        assert cfg.seed == 7

    def test_config_file_parsed_and_flags_win(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("# comment\nn_factors=12\nfamily=mixed\nseed=3\n")
        cfg = ExperimentConfig.build(
            "fig2", tmp_path, config_file=config, overrides={"n_factors": 20}
        )
        assert cfg.params["n_factors"] == 20
        assert cfg.params["family"] == "mixed"
        assert cfg.seed == 3

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown option"):
            ExperimentConfig.build("fig2", tmp_path, overrides={"bogus": 1})

    def test_unknown_experiment_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.build("fig9", tmp_path)

    def test_malformed_config_line(self, tmp_path):
        config = tmp_path / "bad.cfg"
        config.write_text("this is not a pair\n")
        with pytest.raises(ConfigError, match="key=value"):
            parse_config_file(config)

    def test_thread_cap_env(self, monkeypatch):
        monkeypatch.setenv("WARPCODE_THREADS", "4")
        assert thread_cap() == 4
        monkeypatch.setenv("WARPCODE_THREADS", "junk")
        assert thread_cap() == 1


class TestLock:
    def test_second_locker_rejected(self, tmp_path):
        with output_lock(tmp_path):
            with pytest.raises(LockError):
                with output_lock(tmp_path):
                    pass
        # released afterwards
        with output_lock(tmp_path):
            pass

    def test_lock_removed_after_failure(self, tmp_path):
        with pytest.raises(RuntimeError, match="boom"):
            with output_lock(tmp_path):
                raise RuntimeError("boom")
        assert not (tmp_path / ".lock").exists()


class TestOracle:
    def test_noiseless_shift_recovery_small(self, tmp_path):
        cfg = ExperimentConfig.build(
            "oracle", tmp_path / "o", seed=3, overrides={"dim": 8, "n_trials": 40}
        )
        report = run_detector_oracle(cfg)
        assert report.accuracy == 1.0
        assert (tmp_path / "o" / "oracle.csv").exists()
        assert (tmp_path / "o" / "aperture.csv").exists()
        assert (tmp_path / "o" / "manifest.txt").exists()

    def test_noisy_recovery_stays_high(self, tmp_path):
        cfg = ExperimentConfig.build(
            "oracle",
            tmp_path / "n",
            seed=3,
            overrides={"dim": 8, "n_trials": 40, "snr": 10.0},
        )
        report = run_detector_oracle(cfg)
        assert report.accuracy >= 0.9

    def test_shift_readout_pool_marks_matching_angles(self):
        bank = build_shift_bank(8)
        pool = shift_readout_pool(bank, 8)
        # shift 0 detectors are the zero-angle ones
        zero_column = pool[:, 0]
        assert set(np.flatnonzero(zero_column)) == set(
            np.flatnonzero(np.abs(bank.detector_angle) <= 1e-12)
        )
        # every column pools one detector per block that has the angle
        assert pool.sum() > 0

    def test_manifest_lists_checksums(self, tmp_path):
        cfg = ExperimentConfig.build(
            "oracle", tmp_path / "m", seed=1, overrides={"dim": 8, "n_trials": 10}
        )
        run_detector_oracle(cfg)
        manifest = (tmp_path / "m" / "manifest.txt").read_text()
        assert "experiment=oracle" in manifest
        assert "sha256:oracle.csv=" in manifest

    def test_determinism_bitwise(self, tmp_path):
        outputs = []
        for name in ("a", "b"):
            cfg = ExperimentConfig.build(
                "oracle",
                tmp_path / name,
                seed=11,
                overrides={"dim": 8, "n_trials": 25},
            )
            run_detector_oracle(cfg)
            outputs.append((tmp_path / name / "oracle.csv").read_bytes())
        assert outputs[0] == outputs[1]


class TestFig2Smoke:
    def test_artifacts_written(self, tmp_path):
        cfg = ExperimentConfig.build(
            "fig2", tmp_path / "f2", seed=5, overrides=dict(TINY_FIG2)
        )
        report = run_fig2(cfg)
        assert len(report.losses) == 3
        header, rows = read_csv(tmp_path / "f2" / "loss_curve.csv")
        assert header == ["epoch", "loss"] and len(rows) == 3
        header, rows = read_csv(tmp_path / "f2" / "quadrature.csv")
        assert header[:4] == ["pair_index", "theta_hat", "fit_r2", "spectral_overlap"]
        assert len(rows) == TINY_FIG2["n_factors"] // 2
        assert (tmp_path / "f2" / "filters_input.pgm").exists()
        assert (tmp_path / "f2" / "filters_output.pgm").exists()

    def test_zero_learning_rate_is_a_negative_control(self, tmp_path):
        results = []
        for name in ("c1", "c2"):
            overrides = dict(TINY_FIG2)
            overrides["learning_rate"] = 0.0
            cfg = ExperimentConfig.build(
                "fig2", tmp_path / name, seed=5, overrides=overrides
            )
            results.append(run_fig2(cfg))
        np.testing.assert_array_equal(
            results[0].quadrature.fit_r2, results[1].quadrature.fit_r2
        )
        assert np.ptp(results[0].losses) <= 1e-12

    def test_mixed_family_emits_tags(self, tmp_path):
        overrides = dict(TINY_FIG2)
        overrides["family"] = "mixed"
        cfg = ExperimentConfig.build(
            "fig2", tmp_path / "mx", seed=5, overrides=overrides
        )
        report = run_fig2(cfg)
        assert report.family_tags is not None
        header, rows = read_csv(tmp_path / "mx" / "family_tags.csv")
        assert header == ["pair_index", "rotation_score", "tag"]
        assert len(rows) == TINY_FIG2["n_factors"] // 2


class TestFig3Smoke:
    def test_shift_variant_artifacts(self, tmp_path):
        cfg = ExperimentConfig.build(
            "fig3",
            tmp_path / "f3",
            seed=5,
            overrides={
                "width": 9,
                "height": 9,
                "n_clips": 60,
                "n_frames": 3,
                "n_factors": 8,
                "n_mappings": 4,
                "epochs": 3,
                "batch_size": 20,
            },
        )
        report = run_fig3(cfg)
        assert report.segment_energy is None
        header, rows = read_csv(tmp_path / "f3" / "eigenmovie.csv")
        assert header == ["factor_index", "energy", "theta_hat", "consistency_r2"]
        assert len(rows) == 8
        assert (tmp_path / "f3" / "eigenmovie_frames.pgm").exists()

    def test_two_segment_variant_writes_segments(self, tmp_path):
        cfg = ExperimentConfig.build(
            "fig3",
            tmp_path / "f3b",
            seed=5,
            overrides={
                "variant": "rotate_then_shift",
                "width": 9,
                "height": 9,
                "n_clips": 40,
                "n_frames": 4,
                "n_factors": 8,
                "n_mappings": 4,
                "epochs": 2,
                "batch_size": 20,
            },
        )
        report = run_fig3(cfg)
        assert report.segment_energy.shape == (8, 2)
        assert 0.0 <= report.quiet_fraction() <= 1.0
        header, _ = read_csv(tmp_path / "f3b" / "segments.csv")
        assert header == ["factor_index", "energy", "first_energy", "second_energy"]


class TestFig4Smoke:
    def test_accuracy_table_written(self, tmp_path):
        cfg = ExperimentConfig.build(
            "fig4",
            tmp_path / "f4",
            seed=5,
            overrides={
                "width": 16,
                "height": 16,
                "n_pairs": 120,
                "n_factors": 8,
                "n_mappings": 4,
                "epochs": 2,
                "batch_size": 20,
                "glyphs_per_class": 20,
                "train_sizes": (40,),
                "pca_components": 10,
            },
        )
        report = run_fig4(cfg)
        assert set(report.accuracies) == {
            "pooled_logreg",
            "raw_logreg",
            "raw_knn",
            "pca_logreg",
            "pca_knn",
        }
        header, rows = read_csv(tmp_path / "f4" / "accuracy.csv")
        assert header == ["train_size", "method", "accuracy"]
        assert len(rows) == 5
