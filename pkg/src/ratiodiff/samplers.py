"""Reverse-time generation.

Predictor steps linearize the learned reverse rates over a small
interval (Euler tau-leap) or use the closed-form per-dimension law
implied by a clean-state posterior (analytical step).  Correctors are
stationarity-preserving jump dynamics built from a locally balanced
function g with g(u) = u * g(1/u).  The exact reverse simulator is the
tabular gold standard everything else is measured against.

All per-dimension probability rows are formed by clipping at zero and
renormalizing, so every row is a distribution regardless of step size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .nets import softmax
from .rates import RateSpec, kernel_matrix
from .schedules import NoiseSchedule
from .spaces import StateSpace
from .tabular import (
    TabularDistribution,
    digit_strides,
    exact_marginal,
    reverse_rate_table,
)

SAMPLER_KINDS = ("euler", "analytical", "exact_oracle")
G_KINDS = ("sqrt", "t_over_1pt")
CORRECTOR_KINDS = ("none", "lb")

ORACLE_GRID_RESOLUTION = 1e-3


def g_value(u: np.ndarray, kind: str) -> np.ndarray:
    """Locally balanced weight: g(u) = u * g(1/u) for both kinds."""
    u = np.asarray(u, dtype=np.float64)
    if kind == "sqrt":
        return np.sqrt(u)
    if kind == "t_over_1pt":
        return u / (1.0 + u)
    raise ConfigError(f"unknown g kind {kind!r}")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "euler"
    steps: int = 100
    corrector: str = "none"
    g_kind: str = "sqrt"
    corrector_steps_per_predictor: int = 1
    corrector_step_size: float = None
    seed: int = 0
    t_min: float = 1e-3

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.corrector not in CORRECTOR_KINDS:
            raise ConfigError(f"unknown corrector {self.corrector!r}")
        if self.g_kind not in G_KINDS:
            raise ConfigError(f"unknown g kind {self.g_kind!r}")
        if self.corrector_steps_per_predictor < 0:
            raise ConfigError("corrector_steps_per_predictor must be >= 0")
        if self.corrector != "none" and self.corrector_step_size is not None:
            if self.corrector_step_size <= 0.0:
                raise ConfigError("corrector_step_size must be positive")
        if not (0.0 < self.t_min):
            raise ConfigError("t_min must be positive")


def _clip_renorm(rows: np.ndarray) -> np.ndarray:
    rows = np.maximum(rows, 0.0)
    totals = rows.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0.0):
        raise DomainError("transition row lost all mass")
    return rows / totals


def _sample_rows(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(rows, axis=-1)
    u = rng.uniform(size=rows.shape[:-1])[..., None]
    picked = np.sum(u > cdf, axis=-1)
    return np.minimum(picked, rows.shape[-1] - 1).astype(np.int64)


def noisy_conditionals(
    model, xs: np.ndarray, ts: np.ndarray, sched: NoiseSchedule, rate: RateSpec
) -> np.ndarray:
    """Per-dimension conditional law of the noisy digits at times ts.

    Noisy-marginal models give this directly; clean-posterior models are
    pushed through the forward kernel at each sample's time.
    """
    xs = np.asarray(xs, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.float64)
    probs = softmax(model.conditional_logits_batch(xs, ts), axis=-1)
    if model.mode == "noisy_marginal":
        return probs
    out = np.empty_like(probs)
    for t_val in np.unique(ts):
        rows = ts == t_val
        kern = kernel_matrix(rate, float(sched.cumulative(0.0, float(t_val))))
        out[rows] = probs[rows] @ kern
    return out


def euler_row_probs(
    model,
    xs: np.ndarray,
    t: float,
    eps: float,
    sched: NoiseSchedule,
    rate: RateSpec,
) -> np.ndarray:
    """Per-dimension one-step law of the linearized reverse jump.

    Off-values receive eps times the reverse rate
    (conditional ratio) * beta(t) * (base rate from the off-value back
    into the current digit); leftover mass stays put.
    """
    if eps < 0 or eps > t + 1e-12:
        raise DomainError("need 0 <= eps <= t")
    xs = np.asarray(xs, dtype=np.int64)
    b, d = xs.shape
    ts = np.full(b, t)
    cond = noisy_conditionals(model, xs, ts, sched, rate)
    bi = np.arange(b)[:, None]
    di = np.arange(d)[None, :]
    own = cond[bi, di, xs]
    ratio = cond / own[..., None]
    beta = float(sched.beta(t))
    into = rate.matrix.T[xs]  # [b, d, c] = Q[c, x^d]
    rows = eps * beta * ratio * into
    rows[bi, di, xs] = 0.0
    rows[bi, di, xs] = 1.0 - rows.sum(axis=-1)
    return _clip_renorm(rows)


def euler_step(
    model,
    x_t: np.ndarray,
    t: float,
    eps: float,
    sched: NoiseSchedule,
    rate: RateSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    if eps == 0.0:
        return np.asarray(x_t, dtype=np.int64).copy()
    rows = euler_row_probs(model, x_t, t, eps, sched, rate)
    return _sample_rows(rows, rng)


def analytical_row_probs(
    model,
    xs: np.ndarray,
    t: float,
    eps: float,
    sched: NoiseSchedule,
    rate: RateSpec,
) -> np.ndarray:
    """Per-dimension law of X_{t-eps}^d given x_t under a clean posterior.

    Mixes the posterior over the clean digit forward to time t-eps and
    reweights by the likelihood of the observed digit over the residual
    interval: w[c] = sum_c0 post[c0] K0[c0, c] * K1[c, x^d].
    """
    if model.mode != "x0_denoising":
        raise ConfigError("analytical step needs a clean-posterior model")
    if eps < 0 or eps > t + 1e-12:
        raise DomainError("need 0 <= eps <= t")
    xs = np.asarray(xs, dtype=np.int64)
    b, d = xs.shape
    post = softmax(model.conditional_logits_batch(xs, np.full(b, t)), axis=-1)
    k0 = kernel_matrix(rate, float(sched.cumulative(0.0, t - eps)))
    k1 = kernel_matrix(rate, float(sched.cumulative(t - eps, t)))
    mixed = post @ k0
    lik = np.moveaxis(k1[:, xs], 0, -1)  # [b, d, c] = K1[c, x^d]
    return _clip_renorm(mixed * lik)


def analytical_step(
    model,
    x_t: np.ndarray,
    t: float,
    eps: float,
    sched: NoiseSchedule,
    rate: RateSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    rows = analytical_row_probs(model, x_t, t, eps, sched, rate)
    return _sample_rows(rows, rng)


def lb_corrector_row_probs(
    model,
    xs: np.ndarray,
    t: float,
    h: float,
    g_kind: str,
    sched: NoiseSchedule,
    rate: RateSpec,
) -> np.ndarray:
    """One tau-leap of the locally balanced jump dynamics targeting q_t."""
    if h < 0:
        raise DomainError("corrector step size must be >= 0")
    xs = np.asarray(xs, dtype=np.int64)
    b, d = xs.shape
    cond = noisy_conditionals(model, xs, np.full(b, t), sched, rate)
    bi = np.arange(b)[:, None]
    di = np.arange(d)[None, :]
    own = cond[bi, di, xs]
    rows = h * g_value(cond / own[..., None], g_kind)
    rows[bi, di, xs] = 0.0
    rows[bi, di, xs] = 1.0 - rows.sum(axis=-1)
    return _clip_renorm(rows)


def lb_corrector_step(
    model,
    x_t: np.ndarray,
    t: float,
    h: float,
    g_kind: str,
    sched: NoiseSchedule,
    rate: RateSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    rows = lb_corrector_row_probs(model, x_t, t, h, g_kind, sched, rate)
    return _sample_rows(rows, rng)


def birth_death_ratios_from_scores(scores: np.ndarray):
    """Neighbor probability ratios implied by a log-slope estimate."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.exp(scores), np.exp(-scores)


def ordinal_birth_death_step(
    up_ratio: np.ndarray,
    down_ratio: np.ndarray,
    x_t: np.ndarray,
    support: int,
    h: float,
    g_kind: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Two-Poisson tau-leap of the ordinal birth/death corrector.

    Up-jumps arrive with mean h*g(up_ratio), down-jumps with mean
    h*g(down_ratio); the net count moves the state, clamped to the
    support.  A missing neighbor at the boundary contributes rate 0.
    """
    if h < 0:
        raise DomainError("corrector step size must be >= 0")
    x_t = np.asarray(x_t, dtype=np.int64)
    up = g_value(up_ratio, g_kind)
    down = g_value(down_ratio, g_kind)
    up = np.where(x_t >= support - 1, 0.0, up)
    down = np.where(x_t <= 0, 0.0, down)
    n_up = rng.poisson(h * up)
    n_down = rng.poisson(h * down)
    return np.clip(x_t + n_up - n_down, 0, support - 1).astype(np.int64)


def ordinal_corrector_step(
    model,
    x_t: np.ndarray,
    t: float,
    h: float,
    g_kind: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Birth/death corrector driven by a score-regression model."""
    scores = model.scores(x_t, np.full(x_t.shape[0], t))
    up_ratio, down_ratio = birth_death_ratios_from_scores(scores)
    return ordinal_birth_death_step(
        up_ratio, down_ratio, x_t, model.space.vocab, h, g_kind, rng
    )


def default_oracle_grid(sched: NoiseSchedule, t_end: float = 0.0) -> np.ndarray:
    """Descending time grid from the horizon at the oracle resolution."""
    n = max(1, int(round((sched.horizon - t_end) / ORACLE_GRID_RESOLUTION)))
    return np.linspace(sched.horizon, t_end, n + 1)


def exact_reverse_simulate(
    pi_data: TabularDistribution,
    sched: NoiseSchedule,
    rate: RateSpec,
    n_samples: int,
    rng: np.random.Generator,
    grid: np.ndarray = None,
    rate_table_fn=None,
) -> np.ndarray:
    """Gold-standard reverse sampler on an enumerable space.

    Draws initial states from the exact noisy marginal at the first grid
    time, then runs Gillespie dynamics with the exact reverse rates
    frozen within each grid interval.  Returns states at the last grid
    time as an (n_samples, dims) array.  rate_table_fn overrides the
    jump-rate construction; the self-check suite uses it to plant a bug
    and confirm the resulting drift is caught.
    """
    space = pi_data.space
    space.require_tabular()
    if grid is None:
        grid = default_oracle_grid(sched)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 1:
        raise DomainError("grid must be a 1-d array of times")
    if grid.size > 1 and np.any(np.diff(grid) >= 0):
        raise DomainError("grid times must strictly decrease")
    if n_samples == 0:
        return np.zeros((0, space.dims), dtype=np.int64)

    start = exact_marginal(pi_data, float(grid[0]), sched, rate)
    idx = rng.choice(space.n_states, size=n_samples, p=start.probs)
    strides = digit_strides(space)
    digits_all = space.enumerate_states()

    for k in range(grid.size - 1):
        t_hi = float(grid[k])
        delta = t_hi - float(grid[k + 1])
        q_t = exact_marginal(pi_data, t_hi, sched, rate)
        build = reverse_rate_table if rate_table_fn is None else rate_table_fn
        table = build(q_t, rate, sched, t_hi)  # (S, D, C)
        out_rate = table.sum(axis=(1, 2))
        flat = table.reshape(space.n_states, -1)
        totals = np.where(out_rate > 0.0, out_rate, 1.0)
        jump_cdf = np.cumsum(flat / totals[:, None], axis=1)

        remaining = np.full(n_samples, delta)
        act = np.arange(n_samples)
        while act.size:
            lam = out_rate[idx[act]]
            draws = rng.exponential(size=act.size)
            waits = np.full(act.size, np.inf)
            np.divide(draws, lam, out=waits, where=lam > 0.0)
            hit = waits <= remaining[act]
            act = act[hit]
            if act.size == 0:
                break
            remaining[act] -= waits[hit]

            rows = jump_cdf[idx[act]]
            u = rng.uniform(size=act.size)[:, None]
            slot = np.minimum((u > rows).sum(axis=1), rows.shape[1] - 1)
            dim = slot // space.vocab
            val = slot % space.vocab
            old = digits_all[idx[act], dim]
            idx[act] += (val - old) * strides[dim]
    return digits_all[idx]


def sample_reverse(
    model,
    space: StateSpace,
    config: SamplerConfig,
    n_samples: int,
    sched: NoiseSchedule,
    rate: RateSpec,
) -> np.ndarray:
    """Generate states by marching the reverse process from the horizon.

    Starts every chain at the uniform reference law, then alternates one
    predictor step with the configured number of corrector steps on a
    uniform time grid from the horizon down to t_min.  Deterministic for
    a fixed config seed.
    """
    if n_samples < 0:
        raise ConfigError("n_samples must be >= 0")
    rng = np.random.default_rng(config.seed)
    if n_samples == 0:
        return np.zeros((0, space.dims), dtype=np.int64)

    if config.kind == "exact_oracle":
        if not hasattr(model, "pi0"):
            raise ConfigError("exact_oracle sampling needs the exact tabular model")
        return exact_reverse_simulate(model.pi0, sched, rate, n_samples, rng)

    if config.kind == "analytical" and model.mode != "x0_denoising":
        raise ConfigError("analytical sampling needs a clean-posterior model")

    xs = rng.integers(0, space.vocab, size=(n_samples, space.dims))
    ts = np.linspace(sched.horizon, config.t_min, config.steps + 1)
    for k in range(config.steps):
        t_hi = float(ts[k])
        eps = t_hi - float(ts[k + 1])
        if config.kind == "euler":
            xs = euler_step(model, xs, t_hi, eps, sched, rate, rng)
        else:
            xs = analytical_step(model, xs, t_hi, eps, sched, rate, rng)
        if config.corrector == "lb" and config.corrector_steps_per_predictor > 0:
            h = config.corrector_step_size
            if h is None:
                h = eps / 2.0
            for _ in range(config.corrector_steps_per_predictor):
                xs = lb_corrector_step(
                    model, xs, float(ts[k + 1]), h, config.g_kind, sched, rate, rng
                )
    return xs
