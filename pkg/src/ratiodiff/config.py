"""Run configuration: flat dotted keys, file + override parsing, digests.

One registry declares every key with its type and default.  A config is
a plain dict from key to typed value; parsing text or CLI overrides
coerces strings through the registered type, and anything outside the
registry is rejected by name.  The canonical serialization (sorted
``key = value`` lines) is what gets hashed into artifact digests, so
normalize -> serialize -> parse is a fixed point.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import __version__
from .datasets import ToyDatasetSpec
from .errors import ConfigError
from .metrics import MmdConfig
from .models import EnergyModel, HollowModel, MaskedModel, TabularModel
from .rates import uniform_rate
from .samplers import SamplerConfig
from .schedules import NoiseSchedule
from .training import TrainConfig

DEFAULTS = {
    "run.seed": 0,
    "run.threads": 0,
    "data.name": "8gaussians",
    "data.bits": 6,
    "data.lim": 4.0,
    "model.kind": "masked",
    "model.hidden": "64,64",
    "model.mode": "noisy_marginal",
    "model.stream_width": 64,
    "model.layers": 2,
    "model.time_bins": 32,
    "schedule.kind": "constant",
    "schedule.base_rate": 1.0,
    "schedule.horizon": 1.0,
    "train.loss": "ce",
    "train.steps": 1000,
    "train.batch": 128,
    "train.lr": 0.0,
    "train.preset": "default",
    "train.t_min": 1e-3,
    "train.log_every": 50,
    "train.time_weight": 1.0,
    "sample.kind": "euler",
    "sample.steps": 100,
    "sample.n": 4000,
    "sample.corrector": "none",
    "sample.g_kind": "sqrt",
    "sample.corrector_steps": 1,
    "sample.corrector_step_size": 0.0,
    "sample.t_min": 1e-3,
    "eval.bandwidth": 0.1,
    "eval.estimator": "biased",
    "eval.repeats": 10,
    "eval.n": 4000,
    "eval.normalize_hamming": True,
    "eval.tv": True,
}


def _coerce(key: str, raw) -> object:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    want = type(DEFAULTS[key])
    if isinstance(raw, want) and not (want is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if want is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if want is int:
            return int(text)
        if want is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {want.__name__}") from exc


def normalize(overrides: dict = None) -> dict:
    """Full config dict: defaults overlaid with typed overrides."""
    cfg = dict(DEFAULTS)
    for key, raw in (overrides or {}).items():
        cfg[key] = _coerce(key, raw)
    return cfg


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {body!r}")
        key, _, value = body.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: list = None) -> dict:
    """File values overlaid by CLI ``key=value`` overrides, on defaults."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()
    return normalize(raw)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: dict) -> str:
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    lines = [f"{k} = {_format_value(cfg[k])}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


def artifact_metadata(cfg: dict) -> dict:
    return {
        "config_digest": config_digest(cfg),
        "seed": cfg["run.seed"],
        "version": __version__,
    }


# -- object construction -----------------------------------------------------


def make_dataset_spec(cfg: dict) -> ToyDatasetSpec:
    return ToyDatasetSpec(name=cfg["data.name"], bits_per_axis=cfg["data.bits"], lim=cfg["data.lim"])


def make_schedule(cfg: dict) -> NoiseSchedule:
    return NoiseSchedule(
        kind=cfg["schedule.kind"],
        base_rate=cfg["schedule.base_rate"],
        horizon=cfg["schedule.horizon"],
    )


def make_rate(cfg: dict):
    del cfg  # only the uniform base process is wired through the CLI
    return uniform_rate(2)


def _hidden_tuple(cfg: dict) -> tuple:
    text = cfg["model.hidden"].strip()
    if not text:
        raise ConfigError("model.hidden must list at least one layer width")
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"model.hidden: cannot parse {text!r}") from exc


def make_model(cfg: dict, space):
    kind = cfg["model.kind"]
    mode = cfg["model.mode"]
    horizon = cfg["schedule.horizon"]
    seed = cfg["run.seed"]
    if kind == "energy":
        return EnergyModel(space, hidden=_hidden_tuple(cfg), mode=mode, horizon=horizon, seed=seed)
    if kind == "masked":
        return MaskedModel(space, hidden=_hidden_tuple(cfg), mode=mode, horizon=horizon, seed=seed)
    if kind == "hollow":
        return HollowModel(
            space,
            stream_width=cfg["model.stream_width"],
            n_layers=cfg["model.layers"],
            mode=mode,
            horizon=horizon,
            seed=seed,
        )
    if kind == "tabular":
        return TabularModel(
            space, n_time_bins=cfg["model.time_bins"], mode=mode, horizon=horizon, seed=seed
        )
    raise ConfigError(f"unknown model.kind {kind!r}")


def make_train_config(cfg: dict) -> TrainConfig:
    lr = cfg["train.lr"]
    return TrainConfig(
        loss_kind=cfg["train.loss"],
        n_steps=cfg["train.steps"],
        batch_size=cfg["train.batch"],
        seed=cfg["run.seed"],
        t_min=cfg["train.t_min"],
        preset=cfg["train.preset"],
        lr=None if lr == 0.0 else lr,
        log_every=cfg["train.log_every"],
        time_weight=cfg["train.time_weight"],
    )


def make_sampler_config(cfg: dict) -> SamplerConfig:
    size = cfg["sample.corrector_step_size"]
    return SamplerConfig(
        kind=cfg["sample.kind"],
        steps=cfg["sample.steps"],
        corrector=cfg["sample.corrector"],
        g_kind=cfg["sample.g_kind"],
        corrector_steps_per_predictor=cfg["sample.corrector_steps"],
        corrector_step_size=None if size == 0.0 else size,
        seed=cfg["run.seed"],
        t_min=cfg["sample.t_min"],
    )


def make_mmd_config(cfg: dict) -> MmdConfig:
    return MmdConfig(
        bandwidth=cfg["eval.bandwidth"],
        estimator=cfg["eval.estimator"],
        repeats=cfg["eval.repeats"],
        normalize_hamming=cfg["eval.normalize_hamming"],
    )


def apply_thread_setting(cfg: dict) -> None:
    """Bound numpy's worker threads when run.threads is positive."""
    n = cfg["run.threads"]
    if n <= 0:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        import os

        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def toy_space(cfg: dict):
    return make_dataset_spec(cfg).space


def version_banner() -> str:
    return f"ratiodiff {__version__} (numpy {np.__version__})"
