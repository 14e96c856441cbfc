import pytest
from hypothesis import given
from hypothesis import strategies as st

from nasvit.config import (
    RunConfig,
    config_hash,
    config_pairs,
    describe_keys,
    format_config,
    load_config,
    parse_config,
)
from nasvit.errors import ConfigError
from nasvit.presets import texture_run


class TestParse:
    def test_empty_is_default(self):
        assert parse_config("") == RunConfig()
        assert load_config(None) == RunConfig()

    def test_values_and_comments(self):
        text = """
        # toy run
        train.epochs = 3   # short
        train.learning_rate = 0.01
        train.augment = false
        preprocess.clahe_tiles = 4,4
        vit.embed_dim = 16
        data.root = /tmp/x
        """
        run = parse_config(text)
        assert run.train.epochs == 3 and run.train.learning_rate == 0.01 and run.train.augment is False
        assert run.preprocess.clahe_tiles == (4, 4)
        assert run.model.vit.embed_dim == 16
        assert run.data.root == "/tmp/x"

    def test_unknown_key_line_number(self):
        with pytest.raises(ConfigError, match=r"line 3: unknown key 'train.epoch'"):
            parse_config("train.epochs = 2\n\ntrain.epoch = 3\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="line 2: duplicate"):
            parse_config("train.seed = 1\ntrain.seed = 2\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="line 1: bad value"):
            parse_config("train.epochs = many\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("train.epochs 3\n")

    def test_invalid_combination(self):
        with pytest.raises(ConfigError):
            parse_config("vit.embed_dim = 10\nvit.num_heads = 4\n")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.cfg")


class TestRoundTrip:
    @pytest.mark.parametrize("run", [RunConfig(), texture_run(epochs=7, seed=3)], ids=["default", "texture"])
    def test_format_parse(self, run):
        assert parse_config(format_config(run)) == run

    @given(st.integers(1, 500), st.integers(0, 2**31), st.floats(0, 1, allow_nan=False), st.booleans())
    def test_train_section(self, epochs, seed, lr, aug):
        text = f"train.epochs = {epochs}\ntrain.seed = {seed}\ntrain.learning_rate = {lr!r}\ntrain.augment = {aug}\n"
        run = parse_config(text)
        assert parse_config(format_config(run)) == run
        assert (run.train.epochs, run.train.seed, run.train.learning_rate, run.train.augment) == (epochs, seed, lr, aug)


class TestHash:
    def test_stable_and_sensitive(self):
        assert config_hash(RunConfig()) == config_hash(parse_config(""))
        assert config_hash(RunConfig()) != config_hash(parse_config("train.seed = 1\n"))
        assert len(config_hash(RunConfig())) == 64


class TestDescribe:
    def test_every_key_has_default(self):
        lines = describe_keys().splitlines()
        assert len(lines) == len(config_pairs(RunConfig()))
        assert "train.epochs = 100" in lines
        assert "vit.patch_size = 16" in lines
        assert all(" = " in line for line in lines)
