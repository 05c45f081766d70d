"""Training loop wiring: corruption sampling, stepping, metrics.

The loop is deliberately plain.  One rng stream drives data draws,
corruption times, and noisy-state sampling, so a fixed seed replays
the same parameter trajectory.  Per-step metrics go to an in-memory
list and optionally to a csv with columns step,loss,wall_ms.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import ToyDatasetSpec, sample_toy_states
from .errors import ConfigError, NumericError
from .losses import (
    OrdinalKernelSpec,
    TrainingBatch,
    expected_cross_entropy_observed,
    expected_cross_entropy_soft,
    expected_l2,
    make_head,
    ordinal_gradient,
    sample_ordinal_states,
)
from .models import backprop_gradient, save_checkpoint
from .optim import AdamState, adam_preset, adam_step
from .rates import RateSpec
from .schedules import NoiseSchedule
from .simulate import forward_sample_at_times
from .tabular import TabularDistribution, exact_marginal

SAMPLED_KINDS = ("ce", "l2", "x0_ce", "ordinal_score")
EXACT_KINDS = ("ce_exact", "ce_exact_soft", "l2_exact", "l2_exact_full")


def toy_state_sampler(spec: ToyDatasetSpec):
    """Fresh draws from a 2d toy density, Gray-coded to bit vectors."""

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_toy_states(spec, n, rng)

    return sample


def tabular_state_sampler(dist: TabularDistribution):
    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        return dist.sample(n, rng)

    return sample


def fixed_state_sampler(states: np.ndarray):
    """Resample rows of a fixed dataset with replacement."""
    states = np.asarray(states, dtype=np.int64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ConfigError("fixed dataset must be a nonempty (n, dims) array")

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        rows = rng.integers(0, states.shape[0], size=n)
        return states[rows]

    return sample


def sample_training_tuple(
    x0: np.ndarray,
    sched: NoiseSchedule,
    rate: RateSpec,
    rng: np.random.Generator,
    t_min: float = 1e-3,
):
    """Corrupt one clean state at a uniformly drawn time.

    Returns (t, x_t) with t ~ Uniform(t_min, horizon) and x_t drawn
    from the forward kernel at that time.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    t = float(rng.uniform(t_min, sched.horizon))
    x_t = forward_sample_at_times(x0[None, :], np.array([t]), sched, rate, rng)[0]
    return t, x_t


def sample_training_batch(
    sampler,
    batch_size: int,
    sched: NoiseSchedule,
    rate: RateSpec,
    rng: np.random.Generator,
    t_min: float = 1e-3,
) -> TrainingBatch:
    x0 = sampler(batch_size, rng)
    ts = rng.uniform(t_min, sched.horizon, size=batch_size)
    x_t = forward_sample_at_times(x0, ts, sched, rate, rng)
    return TrainingBatch(x0=x0, t=ts, x_t=x_t)


def sample_ordinal_batch(
    sampler,
    batch_size: int,
    kspec: OrdinalKernelSpec,
    horizon: float,
    rng: np.random.Generator,
    t_min: float = 1e-3,
) -> TrainingBatch:
    x0 = sampler(batch_size, rng)
    ts = rng.uniform(t_min, horizon, size=batch_size)
    x_t = sample_ordinal_states(x0, ts, kspec, rng)
    return TrainingBatch(x0=x0, t=ts, x_t=x_t)


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str
    n_steps: int
    batch_size: int = 128
    seed: int = 0
    t_min: float = 1e-3
    preset: str = "default"
    lr: float = None
    log_every: int = 1
    time_weight: float = 1.0
    kernel: OrdinalKernelSpec = None

    def __post_init__(self):
        if self.loss_kind == "path_kl":
            raise ConfigError(
                "path_kl is an evaluation objective with no parameter "
                "gradient; train with one of the sampled or exact kinds"
            )
        if self.loss_kind not in SAMPLED_KINDS + EXACT_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not (0.0 < self.t_min < 1.0):
            raise ConfigError("t_min must sit in (0, 1)")
        if self.log_every < 1:
            raise ConfigError("log_every must be positive")
        if self.time_weight <= 0.0:
            raise ConfigError("time_weight must be positive")
        if self.loss_kind == "ordinal_score" and self.kernel is None:
            raise ConfigError("ordinal_score training needs a kernel spec")


@dataclass
class TrainResult:
    model: object
    metrics: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        if not self.metrics:
            return float("nan")
        return self.metrics[-1][1]


def _check_mode(model, kind: str):
    if kind == "ordinal_score":
        if model.kind != "ordinal_score":
            raise ConfigError("ordinal_score loss needs a score-regression model")
        return
    if model.kind == "ordinal_score":
        raise ConfigError("score-regression models train only with ordinal_score")
    if kind == "x0_ce":
        if model.mode != "x0_denoising":
            raise ConfigError("x0_ce needs a model in x0_denoising mode")
    elif model.mode != "noisy_marginal":
        raise ConfigError(f"loss {kind!r} needs a model in noisy_marginal mode")


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "wall_ms"])
        for step, loss, wall_ms in rows:
            writer.writerow([step, repr(float(loss)), f"{wall_ms:.3f}"])


def train(
    model,
    data,
    sched: NoiseSchedule,
    rate: RateSpec,
    config: TrainConfig,
    out_dir=None,
    extra_meta: dict = None,
) -> TrainResult:
    """Run the optimization loop and optionally persist artifacts.

    data is a sampler callable (n, rng) -> states for the sampled loss
    kinds, or a TabularDistribution for the exact-expectation kinds
    where every step enumerates the state space at a fresh time.  With
    n_steps=0 the parameters are written out untouched.
    """
    _check_mode(model, config.loss_kind)
    exact = config.loss_kind in EXACT_KINDS
    if exact and not isinstance(data, TabularDistribution):
        raise ConfigError("exact-expectation losses need a TabularDistribution")
    if exact:
        data.space.require_tabular()

    rng = np.random.default_rng(config.seed)
    opt = adam_preset(config.preset, lr=config.lr)
    state = AdamState.zeros(model.n_params)
    head = None
    if config.loss_kind in SAMPLED_KINDS:
        head = make_head(config.loss_kind, sched, rate, kspec=config.kernel)

    metrics = []
    for step in range(1, config.n_steps + 1):
        tic = time.perf_counter()
        try:
            if config.loss_kind == "ordinal_score":
                batch = sample_ordinal_batch(
                    data, config.batch_size, config.kernel, sched.horizon, rng,
                    t_min=config.t_min,
                )
                batch.weight *= config.time_weight
                value, grads = ordinal_gradient(model, head, batch)
            elif exact:
                t = float(rng.uniform(config.t_min, sched.horizon))
                q_t = exact_marginal(data, t, sched, rate)
                if config.loss_kind == "ce_exact":
                    value, grads = expected_cross_entropy_observed(model, q_t, t)
                elif config.loss_kind == "ce_exact_soft":
                    value, grads = expected_cross_entropy_soft(model, q_t, t)
                elif config.loss_kind == "l2_exact":
                    value, grads = expected_l2(model, q_t, t, simplified=True)
                else:
                    value, grads = expected_l2(model, q_t, t, simplified=False)
                value *= config.time_weight
                grads = grads * config.time_weight
            else:
                batch = sample_training_batch(
                    data, config.batch_size, sched, rate, rng, t_min=config.t_min
                )
                batch.weight *= config.time_weight
                value, grads = backprop_gradient(model, head, batch)
        except NumericError as exc:
            raise NumericError(f"training aborted at step {step}: {exc}") from exc

        params = adam_step(model.flat_params(), grads, state, opt)
        model.set_flat_params(params)
        wall_ms = (time.perf_counter() - tic) * 1000.0
        if step % config.log_every == 0 or step == config.n_steps:
            metrics.append((step, float(value), wall_ms))

    result = TrainResult(model=model, metrics=metrics)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "metrics.csv", metrics)
        extra = {"loss_kind": config.loss_kind, "n_steps": config.n_steps,
                 "seed": config.seed}
        if extra_meta:
            extra.update(extra_meta)
        save_checkpoint(model, out_dir / "model.rdck", extra=extra)
    return result
