"""
Unit tests for configuration management.
"""
import json
import os
from unittest.mock import patch

import pytest

from shared.config import (
    ConfigManager,
    get_config,
    get_config_manager,
    read_config_file,
    reset_config,
    resolve_model_config,
)
from shared.errors import InputError
from shared.types import EncodingMode, PddkitSettings


class TestConfigManager:
    """Test ConfigManager class."""

    def setup_method(self):
        """Reset config before each test."""
        reset_config()

    def test_env_loading(self, tmp_path):
        """Test loading configuration from environment."""
        env_vars = {
            "PDDKIT_THREADS": "3",
            "PDDKIT_K": "20",
            "PDDKIT_TOL": "0.01",
            "PDDKIT_OUT_ROOT": "/tmp/out",
            "PDDKIT_EMBEDDINGS": "https://tables.test/mat.csv",
        }

        with patch.dict(os.environ, env_vars, clear=True):
            manager = ConfigManager(env_file=str(tmp_path / "absent.env"))
            config = manager.load()

            assert config.threads == 3
            assert config.k == 20
            assert config.tolerance == 0.01
            assert config.out_root == "/tmp/out"
            assert config.embeddings == "https://tables.test/mat.csv"

    def test_env_file_loading(self, tmp_path):
        """Test loading from .env file."""
        env_file = tmp_path / ".env"
        env_file.write_text("PDDKIT_THREADS=2\nPDDKIT_MAX_SUPERCELL_POINTS=500\nPDDKIT_HTTP_TIMEOUT=5\n")

        with patch.dict(os.environ, {}, clear=True):
            config = ConfigManager(env_file=str(env_file)).load()

            assert config.threads == 2
            assert config.max_supercell_points == 500
            assert config.http_timeout == 5.0

    def test_defaults(self, tmp_path):
        """Test defaults when nothing is set."""
        with patch.dict(os.environ, {}, clear=True):
            config = ConfigManager(env_file=str(tmp_path / "absent.env")).load()

            assert config.k == 15
            assert config.tolerance == 1e-4
            assert config.out_root == "runs"
            assert config.embeddings is None
            assert config.threads >= 1

    def test_load_is_cached(self, tmp_path):
        with patch.dict(os.environ, {"PDDKIT_K": "7"}, clear=True):
            manager = ConfigManager(env_file=str(tmp_path / "absent.env"))
            first = manager.load()
        with patch.dict(os.environ, {"PDDKIT_K": "9"}, clear=True):
            assert manager.load() is first

    @pytest.mark.parametrize("key,value", [
        ("PDDKIT_THREADS", "0"),
        ("PDDKIT_MAX_SUPERCELL_POINTS", "0"),
        ("PDDKIT_K", "0"),
        ("PDDKIT_TOL", "-1"),
        ("PDDKIT_HTTP_TIMEOUT", "0"),
        ("PDDKIT_K", "many"),
    ])
    def test_invalid_values(self, tmp_path, key, value):
        """Out-of-range or unparsable values raise InputError."""
        with patch.dict(os.environ, {key: value}, clear=True):
            with pytest.raises(InputError):
                ConfigManager(env_file=str(tmp_path / "absent.env")).load()

    def test_irrelevant_variables_ignored(self, tmp_path):
        with patch.dict(os.environ, {"HOME": "/root", "K": "3"}, clear=True):
            config = ConfigManager(env_file=str(tmp_path / "absent.env")).load()
            assert config.k == 15

    def test_logging_config(self, tmp_path):
        env_vars = {"LOG_LEVEL": "DEBUG", "LOG_FORMAT": "json"}
        with patch.dict(os.environ, env_vars, clear=True):
            logging_config = ConfigManager(env_file=str(tmp_path / "absent.env")).get_logging_config()
            assert logging_config == {"level": "DEBUG", "format": "json", "file": None}

    def test_global_config(self):
        """The global manager is created once and reset on demand."""
        with patch.dict(os.environ, {"PDDKIT_K": "11"}, clear=True):
            assert get_config_manager() is get_config_manager()
            assert isinstance(get_config(), PddkitSettings)
            assert get_config().k == 11
            reset_config()
            os.environ["PDDKIT_K"] = "12"
            assert get_config().k == 12


class TestConfigFiles:
    """Test model and training config files."""

    def test_toml_sections(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text(
            "[model]\nd_model = 32\nheads = 4\nencoding = \"structure\"\nspecies_aware = false\n\n"
            "[train]\nepochs = 10\nlr = 0.005\n"
        )
        model, opts = resolve_model_config(read_config_file(str(path)))

        assert model.d_model == 32
        assert model.head_dim == 8
        assert model.encoding is EncodingMode.STRUCTURE
        assert opts.epochs == 10
        assert opts.lr == 0.005
        assert model.encoders == 4

    def test_json_flat(self, tmp_path):
        """A flat table is split by field name; seed goes to both."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"k": 8, "epochs": 4, "seed": 6}))
        model, opts = resolve_model_config(read_config_file(str(path)))

        assert model.k == 8
        assert opts.epochs == 4
        assert model.seed == 6 and opts.seed == 6

    def test_overrides_win(self):
        file_data = {"model": {"d_model": 64}, "train": {"epochs": 10, "lr": 0.01}}
        model, opts = resolve_model_config(file_data, {"epochs": 3, "lr": None, "d_model": 16})

        assert opts.epochs == 3
        assert opts.lr == 0.01
        assert model.d_model == 16

    def test_defaults_without_file(self):
        model, opts = resolve_model_config()

        assert (model.d_model, model.heads, model.encoders, model.k) == (128, 4, 4, 15)
        assert model.attention_dropout == 0.1
        assert opts.batch_size is None

    def test_unknown_key(self):
        with pytest.raises(InputError, match="unknown config key"):
            resolve_model_config({"learning_rate": 0.1})
        with pytest.raises(InputError):
            resolve_model_config({"model": {"width": 3}})

    def test_invalid_value(self):
        """Width not divisible by the head count is rejected."""
        with pytest.raises(InputError):
            resolve_model_config({"model": {"d_model": 10, "heads": 4}})
        with pytest.raises(InputError):
            resolve_model_config({"train": {"epochs": 0}})

    def test_unreadable_files(self, tmp_path):
        with pytest.raises(InputError):
            read_config_file(str(tmp_path / "absent.toml"))
        broken = tmp_path / "broken.toml"
        broken.write_text("[model\n")
        with pytest.raises(InputError):
            read_config_file(str(broken))
        listed = tmp_path / "list.json"
        listed.write_text("[1, 2]")
        with pytest.raises(InputError):
            read_config_file(str(listed))
