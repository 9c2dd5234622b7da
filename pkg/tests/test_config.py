"""
Test suite for process settings and the run configuration.

Covers environment overrides, INI parsing, seed derivation and the content
hash recorded in the manifest.
"""

import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from src.core import config as config_module
from src.core.config import (
    SEED_OFFSETS,
    GenConfig,
    RunConfig,
    Settings,
    load_env_settings,
    load_run_config,
)
from src.core.exceptions import ConfigurationError


def write_ini(text: str) -> Path:
    handle = tempfile.NamedTemporaryFile("w", suffix=".ini", delete=False, encoding="utf-8")
    handle.write(text)
    handle.close()
    return Path(handle.name)


class TestSettings:
    """Test Settings defaults and environment overrides."""

    def test_defaults(self):
        """Test default artifact directory and file names."""
        settings = Settings()
        assert settings.OUT_DIR == Path("artifacts")
        assert settings.MANIFEST_FILE == "manifest.json"
        assert settings.RUN_CONFIG_FILE == "run_config.json"
        assert settings.get_artifact_path("a.csv", Path("out")) == Path("out") / "a.csv"

    def test_ensure_out_directory(self):
        """Test that missing directories are created."""
        with tempfile.TemporaryDirectory() as tmp:
            target = Path(tmp) / "nested" / "out"
            assert Settings().ensure_out_directory(target)
            assert target.is_dir()

    def test_load_env_settings(self):
        """Test VDT_* environment variables."""
        fresh = Settings()
        env = {"VDT_OUT_DIR": "/tmp/vdt-out", "VDT_LOG_LEVEL": "debug", "VDT_CONFIG": "run.ini"}
        with patch.object(config_module, "settings", fresh), patch.dict(os.environ, env):
            load_env_settings()
        assert fresh.OUT_DIR == Path("/tmp/vdt-out")
        assert fresh.LOG_LEVEL == "DEBUG"
        assert fresh.CONFIG_PATH == Path("run.ini")


class TestSeedDerivation:
    """Test per-stage seeds derived from the global seed."""

    def test_default_seeds_are_populated(self):
        """Test that every stage seed is set after construction."""
        config = RunConfig()
        for stage, offset in SEED_OFFSETS.items():
            assert getattr(config.seeds, stage) == config.seeds.global_seed + offset
        assert config.generator.seed == config.seeds.generator

    def test_explicit_seed_is_kept(self):
        """Test that an explicit stage seed survives a global seed change."""
        config = RunConfig(seeds={"global_seed": 10, "split": 999})
        changed = config.with_global_seed(20, {"split": 999})
        assert changed.seeds.split == 999
        assert changed.seeds.pattern == 20 + SEED_OFFSETS["pattern"]
        assert changed.generator.seed == 20 + SEED_OFFSETS["generator"]

    def test_explicit_seeds_reported(self):
        """Test that load_run_config returns the seeds set in the file."""
        path = write_ini("[seeds]\nglobal_seed = 5\ndetector = 77\n")
        try:
            config, explicit = load_run_config(path)
        finally:
            path.unlink()
        assert explicit == {"detector": 77}
        assert config.seeds.detector == 77
        assert config.seeds.explainer == 5 + SEED_OFFSETS["explainer"]


class TestLoadRunConfig:
    """Test INI parsing and validation."""

    def test_no_file_gives_defaults(self):
        """Test defaults when no path is given."""
        config, explicit = load_run_config(None)
        assert config.generator.n_sessions == 1199
        assert config.detector.percentile == 0.9
        assert explicit == {}

    def test_lists_and_nested_keys(self):
        """Test comma-separated lists, ladder rungs and nested sections."""
        path = write_ini(
            "[generator]\n"
            "n_sessions = 40\n"
            "abr_ladder = 500:2.0, 1500:3.5, 3000:4.4\n"
            "snr_process.mean_normal = 4.2\n"
            "[pattern]\n"
            "epochs_grid = 5, 10\n"
            "dropout_grid = 0.0\n"
            "[detector]\n"
            "actual_quantile = none\n"
        )
        try:
            config, _ = load_run_config(path)
        finally:
            path.unlink()
        assert config.generator.n_sessions == 40
        assert config.generator.abr_ladder == [(500.0, 2.0), (1500.0, 3.5), (3000.0, 4.4)]
        assert config.generator.snr_process.mean_normal == 4.2
        assert config.pattern.epochs_grid == [5, 10]
        assert config.detector.actual_quantile is None

    def test_overrides(self):
        """Test overrides applied on top of the file."""
        config, _ = load_run_config(None, {"predictor": {"n_trials": 3}})
        assert config.predictor.n_trials == 3

    @pytest.mark.parametrize("text", [
        "[generator]\nn_sessions = 0\n",
        "[generator]\nunknown_key = 1\n",
        "[nonsense]\na = 1\n",
        "[detector]\npercentile = 1.5\n",
        "[pattern]\ndropout_grid = 1.0\n",
        "[generator]\nabr_ladder = 900:3.0, 400:2.0\n",
        "not an ini file",
    ])
    def test_invalid_config(self, text):
        """Test that invalid files raise ConfigurationError."""
        path = write_ini(text)
        try:
            with pytest.raises(ConfigurationError):
                load_run_config(path)
        finally:
            path.unlink()

    def test_missing_file(self):
        """Test an unreadable path."""
        with pytest.raises(ConfigurationError):
            load_run_config(Path("/nonexistent/run.ini"))


class TestContentHash:
    """Test the canonical JSON hash."""

    def test_hash_is_stable(self):
        """Test that equal configs hash equally."""
        assert RunConfig().content_hash() == RunConfig().content_hash()

    def test_hash_ignores_paths(self):
        """Test that the artifact directory does not affect the hash."""
        assert RunConfig(paths={"out_dir": "a"}).content_hash() == RunConfig(paths={"out_dir": "b"}).content_hash()

    def test_hash_tracks_results_sections(self):
        """Test that result-affecting values change the hash."""
        assert RunConfig().content_hash() != RunConfig(detector={"percentile": 0.8}).content_hash()
        assert RunConfig().content_hash() != RunConfig().with_global_seed(1).content_hash()

    def test_gen_config_periods(self):
        """Test cross-field validation of generator periods."""
        with pytest.raises(ValueError):
            GenConfig(mos_period_min_s=6.0, mos_period_max_s=5.0)
