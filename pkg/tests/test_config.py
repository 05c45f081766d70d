"""Configuration registry: coercion, layering, serialization, digests,
and the object constructors the command line is built from."""

import pytest

from ratiodiff.config import (
    DEFAULTS,
    artifact_metadata,
    config_digest,
    load_config,
    make_dataset_spec,
    make_mmd_config,
    make_model,
    make_rate,
    make_sampler_config,
    make_schedule,
    make_train_config,
    normalize,
    parse_config_text,
    serialize_config,
)
from ratiodiff.errors import ConfigError
from ratiodiff.nets import EnergyModel, HollowModel, MaskedModel, TabularModel
from ratiodiff.spaces import StateSpace


class TestNormalize:
    def test_defaults_pass_through(self):
        cfg = normalize()
        assert cfg == DEFAULTS
        assert cfg is not DEFAULTS

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="nope.key"):
            normalize({"nope.key": 1})

    def test_unknown_key_in_known_section(self):
        with pytest.raises(ConfigError, match="eval.bogus"):
            normalize({"eval.bogus": "x"})

    @pytest.mark.parametrize(
        "key,text,want",
        [
            ("train.steps", "250", 250),
            ("schedule.base_rate", "2.5", 2.5),
            ("eval.normalize_hamming", "false", False),
            ("eval.normalize_hamming", "1", True),
            ("eval.tv", "no", False),
            ("data.name", "2spirals", "2spirals"),
        ],
    )
    def test_string_coercion(self, key, text, want):
        assert normalize({key: text})[key] == want

    @pytest.mark.parametrize(
        "key,text",
        [("train.steps", "many"), ("data.lim", "wide"), ("eval.tv", "maybe")],
    )
    def test_bad_literal_names_the_key(self, key, text):
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            normalize({key: text})


class TestTextFormat:
    def test_parse_lines_comments_blanks(self):
        text = "# full line comment\n\ntrain.steps = 7  # trailing\ndata.name=rings\n"
        raw = parse_config_text(text)
        assert raw == {"train.steps": "7", "data.name": "rings"}

    def test_parse_error_carries_line_number(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config_text("# ok\ntrain.steps = 7\nnot an assignment\n")

    def test_round_trip_is_fixed_point(self):
        cfg = normalize({"train.steps": 42, "data.lim": 3.5, "eval.tv": False})
        text = serialize_config(cfg)
        again = normalize(parse_config_text(text))
        assert again == cfg
        assert serialize_config(again) == text

    def test_serialize_rejects_stray_keys(self):
        cfg = normalize()
        cfg["stray"] = 1
        with pytest.raises(ConfigError, match="stray"):
            serialize_config(cfg)


class TestLoadConfig:
    def test_precedence_cli_over_file_over_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("train.steps = 5\ndata.name = rings\n")
        cfg = load_config(path, ["train.steps=9"])
        assert cfg["train.steps"] == 9          # CLI wins
        assert cfg["data.name"] == "rings"      # file beats default
        assert cfg["train.batch"] == DEFAULTS["train.batch"]

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(ConfigError, match="no-such.cfg"):
            load_config(tmp_path / "no-such.cfg", [])

    def test_malformed_override(self):
        with pytest.raises(ConfigError, match="key=value"):
            load_config(None, ["train.steps"])


class TestDigest:
    def test_stable_and_sensitive(self):
        base = config_digest(normalize())
        assert base == config_digest(normalize())
        assert len(base) == 16
        assert config_digest(normalize({"run.seed": 1})) != base

    def test_artifact_metadata_fields(self):
        meta = artifact_metadata(normalize({"run.seed": 11}))
        assert meta["seed"] == 11
        assert meta["config_digest"] == config_digest(normalize({"run.seed": 11}))
        assert meta["version"]


class TestConstructors:
    def test_dataset_spec(self):
        spec = make_dataset_spec(normalize({"data.name": "2spirals", "data.bits": 4}))
        assert spec.name == "2spirals"
        assert spec.space.dims == 8 and spec.space.vocab == 2

    def test_schedule_and_rate(self):
        cfg = normalize({"schedule.kind": "cosine", "schedule.base_rate": 3.0})
        sched = make_schedule(cfg)
        assert sched.kind == "cosine" and sched.base_rate == 3.0
        rate = make_rate(cfg)
        assert rate.vocab == 2 and rate.uniform

    @pytest.mark.parametrize(
        "kind,cls",
        [
            ("energy", EnergyModel),
            ("masked", MaskedModel),
            ("hollow", HollowModel),
            ("tabular", TabularModel),
        ],
    )
    def test_model_dispatch(self, kind, cls):
        cfg = normalize(
            {"model.kind": kind, "model.hidden": "8,8", "model.time_bins": 4,
             "model.stream_width": 8, "data.bits": 2}
        )
        model = make_model(cfg, StateSpace(dims=4, vocab=2))
        assert isinstance(model, cls)

    def test_model_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown model.kind"):
            make_model(normalize({"model.kind": "transformer"}), StateSpace(dims=4, vocab=2))

    def test_hidden_parse_failure(self):
        cfg = normalize({"model.kind": "masked", "model.hidden": "64,big"})
        with pytest.raises(ConfigError, match="model.hidden"):
            make_model(cfg, StateSpace(dims=4, vocab=2))

    def test_train_config_zero_lr_means_preset_default(self):
        tcfg = make_train_config(normalize({"train.lr": 0.0, "train.steps": 3}))
        assert tcfg.lr is None and tcfg.n_steps == 3
        assert make_train_config(normalize({"train.lr": 0.01})).lr == 0.01

    def test_sampler_config_zero_step_size_means_auto(self):
        scfg = make_sampler_config(normalize({"sample.corrector_step_size": 0.0}))
        assert scfg.corrector_step_size is None
        scfg = make_sampler_config(normalize({"sample.corrector_step_size": 0.02}))
        assert scfg.corrector_step_size == 0.02

    def test_mmd_config(self):
        mcfg = make_mmd_config(normalize({"eval.repeats": 4, "eval.estimator": "unbiased"}))
        assert mcfg.repeats == 4 and mcfg.estimator == "unbiased"
