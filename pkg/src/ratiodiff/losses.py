"""Training losses for conditional-ratio models.

Two families live here.  Sampled loss heads consume a batch of noisy
states and model logits and return a scalar loss along with its
gradient with respect to the logits; `models.backprop_gradient` chains
that through the network.  Exact-expectation losses enumerate every
state of a tabular-sized space, weight per-state terms by the exact
noisy marginal, and return the loss together with a full parameter
gradient.  The exact variants are what the equality and
constant-offset checks in the test suite exercise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NumericError
from .models import tabular_conditionals
from .nets import log_softmax, softmax
from .rates import RateSpec, kernel_matrix
from .schedules import NoiseSchedule
from .spaces import StateSpace
from .tabular import TabularDistribution, exact_marginal

CONDITIONAL_FLOOR = 1e-12


@dataclass
class TrainingBatch:
    """One step's worth of corrupted samples.

    x0 and x_t are integer arrays of shape (batch, dims); t is the
    per-sample corruption time of shape (batch,).  weight carries the
    time-weighting factor and defaults to ones.
    """

    x0: np.ndarray
    t: np.ndarray
    x_t: np.ndarray
    weight: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.int64)
        self.x_t = np.asarray(self.x_t, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.weight is None:
            self.weight = np.ones(self.t.shape[0])
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.x0.shape != self.x_t.shape:
            raise DomainError("x0 and x_t shapes differ")
        if self.t.shape != (self.x0.shape[0],):
            raise DomainError("t must be one time per sample")
        if self.weight.shape != self.t.shape:
            raise DomainError("weight must be one scalar per sample")


def _batch_gather(probs: np.ndarray, digits: np.ndarray) -> np.ndarray:
    """Pick probs[b, d, digits[b, d]] for every (b, d)."""
    b, d = digits.shape
    bi = np.arange(b)[:, None]
    di = np.arange(d)[None, :]
    return probs[bi, di, digits]


class CrossEntropyHead:
    """Negative log conditional probability of the observed digits.

    The per-sample term is the sum over dimensions of
    -log p(x_t^d | rest); a model emitting uniform conditionals over C
    values therefore scores dims * log(C).
    """

    def evaluate(self, logits: np.ndarray, batch: TrainingBatch):
        b, d, c = logits.shape
        logp = log_softmax(logits, axis=-1)
        picked = _batch_gather(logp, batch.x_t)
        per_sample = -picked.sum(axis=1)
        value = float(np.mean(batch.weight * per_sample))
        if not np.isfinite(value):
            raise NumericError("cross entropy diverged")

        p = np.exp(logp)
        dlogits = p.copy()
        bi = np.arange(b)[:, None]
        di = np.arange(d)[None, :]
        dlogits[bi, di, batch.x_t] -= 1.0
        dlogits *= (batch.weight / b)[:, None, None]
        return value, dlogits


class L2Head:
    """Squared-probability ratio surrogate on the observed digits.

    The per-dimension term is sum_c p(c)^2 - 2 p(x_t^d).  For a binary
    alphabet this collapses to 2 (1 - p)^2 - 1 where p is the
    probability assigned to the observed value.
    """

    def evaluate(self, logits: np.ndarray, batch: TrainingBatch):
        b, d, c = logits.shape
        p = softmax(logits, axis=-1)
        sq = np.sum(p * p, axis=-1)
        p_obs = _batch_gather(p, batch.x_t)
        per_sample = (sq - 2.0 * p_obs).sum(axis=1)
        value = float(np.mean(batch.weight * per_sample))
        if not np.isfinite(value):
            raise NumericError("squared-probability loss diverged")

        # d(term)/dp_c = 2 p_c - 2 [c == observed], pushed through the
        # softmax jacobian p_j (g_j - sum_c p_c g_c).
        g = 2.0 * p
        bi = np.arange(b)[:, None]
        di = np.arange(d)[None, :]
        g[bi, di, batch.x_t] -= 2.0
        inner = np.sum(p * g, axis=-1, keepdims=True)
        dlogits = p * (g - inner)
        dlogits *= (batch.weight / b)[:, None, None]
        return value, dlogits


def marginal_kernel(sched: NoiseSchedule, rate: RateSpec, t: float) -> np.ndarray:
    """Single-dimension transition kernel from time 0 to time t."""
    tau = float(sched.cumulative(0.0, t))
    return kernel_matrix(rate, tau)


def x0_marginal_transform(
    x0_probs: np.ndarray, sched: NoiseSchedule, rate: RateSpec, t: float
) -> np.ndarray:
    """Push clean-state probabilities through the forward kernel.

    Mixes a per-dimension clean posterior into the noisy conditional
    at time t: out[c] = sum_c0 x0_probs[..., c0] K[c0, c].  The result
    of a normalized input stays normalized; drift beyond 1e-9 raises.
    """
    kern = marginal_kernel(sched, rate, t)
    out = np.asarray(x0_probs, dtype=np.float64) @ kern
    totals = out.sum(axis=-1)
    if not np.allclose(totals, 1.0, atol=1e-9):
        raise NumericError("kernel transform lost probability mass")
    return out


class DenoisingCrossEntropyHead:
    """Cross entropy on noisy digits through a clean-state posterior.

    The model predicts per-dimension distributions over the clean
    value; those are mixed through the forward kernel at each sample's
    time and scored against the observed noisy digit.
    """

    def __init__(self, sched: NoiseSchedule, rate: RateSpec):
        self.sched = sched
        self.rate = rate

    def evaluate(self, logits: np.ndarray, batch: TrainingBatch):
        b, d, c = logits.shape
        q0 = softmax(logits, axis=-1)

        mixed = np.empty_like(q0)
        kernels = np.empty((b, c, c))
        for t_val in np.unique(batch.t):
            rows = batch.t == t_val
            kern = marginal_kernel(self.sched, self.rate, float(t_val))
            mixed[rows] = q0[rows] @ kern
            kernels[rows] = kern

        m_obs = _batch_gather(mixed, batch.x_t)
        if np.any(m_obs <= 0.0):
            raise NumericError("observed digit has zero mixed probability")
        per_sample = -np.log(m_obs).sum(axis=1)
        value = float(np.mean(batch.weight * per_sample))
        if not np.isfinite(value):
            raise NumericError("denoising cross entropy diverged")

        dmixed = np.zeros_like(mixed)
        bi = np.arange(b)[:, None]
        di = np.arange(d)[None, :]
        dmixed[bi, di, batch.x_t] = -(batch.weight[:, None] / b) / m_obs
        dq0 = np.einsum("bdc,bec->bde", dmixed, kernels)
        inner = np.sum(q0 * dq0, axis=-1, keepdims=True)
        dlogits = q0 * (dq0 - inner)
        return value, dlogits


@dataclass(frozen=True)
class OrdinalKernelSpec:
    """Discretized squared-exponential corruption on an integer range.

    The forward kernel at time t puts mass proportional to
    exp(-(y - x0)^2 / (corrupt_rate * t)) on each support value y.
    """

    corrupt_rate: float
    support: int

    def __post_init__(self):
        if self.corrupt_rate <= 0.0:
            raise ConfigError("corrupt_rate must be positive")
        if self.support < 3:
            raise ConfigError("ordinal support needs at least 3 values")


def ordinal_log_kernel(kspec: OrdinalKernelSpec, t: float) -> np.ndarray:
    """Log forward kernel, rows indexed by clean value."""
    if t <= 0.0:
        raise DomainError("ordinal kernel needs t > 0")
    grid = np.arange(kspec.support, dtype=np.float64)
    sq = -((grid[None, :] - grid[:, None]) ** 2) / (kspec.corrupt_rate * t)
    return log_softmax(sq, axis=-1)


def sample_ordinal_states(
    x0: np.ndarray, ts: np.ndarray, kspec: OrdinalKernelSpec, rng: np.random.Generator
) -> np.ndarray:
    """Draw noisy ordinal states from the discretized kernel."""
    x0 = np.asarray(x0, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.float64)
    grid = np.arange(kspec.support, dtype=np.float64)
    logs = -((grid - x0[..., None].astype(np.float64)) ** 2)
    logs = logs / (kspec.corrupt_rate * ts[:, None, None])
    probs = softmax(logs, axis=-1)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.uniform(size=x0.shape)[..., None]
    out = np.sum(u > cdf, axis=-1)
    return np.minimum(out, kspec.support - 1).astype(np.int64)


def ordinal_score_target(
    x0: np.ndarray, x_t: np.ndarray, ts: np.ndarray, kspec: OrdinalKernelSpec
) -> np.ndarray:
    """Finite-difference log-density slope the score net regresses on.

    Interior points use the centered estimate
    (log k(x_t + 1 | x0) - log k(x_t - 1 | x0)) / 2, which reduces to
    -2 (x_t - x0) / (corrupt_rate * t) because the normalizer cancels.
    At the ends of the range the missing neighbor drops out and the
    one-sided difference is used with no halving.  Working with exact
    log-ratios means no neighbor term can underflow to zero, so no
    term exclusion is ever triggered.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.float64)
    u = x_t.astype(np.float64) - x0
    denom = kspec.corrupt_rate * ts[:, None]
    target = -2.0 * u / denom
    lower = x_t == 0
    upper = x_t == kspec.support - 1
    target = np.where(lower, -(2.0 * u + 1.0) / denom, target)
    target = np.where(upper, -(2.0 * u - 1.0) / denom, target)
    return target


class OrdinalScoreHead:
    """Squared error against the discretized log-density slope."""

    def __init__(self, kspec: OrdinalKernelSpec):
        self.kspec = kspec

    def evaluate(self, scores: np.ndarray, batch: TrainingBatch):
        b = scores.shape[0]
        target = ordinal_score_target(batch.x0, batch.x_t, batch.t, self.kspec)
        diff = scores - target
        per_sample = np.sum(diff * diff, axis=1)
        value = float(np.mean(batch.weight * per_sample))
        dscores = 2.0 * diff * (batch.weight / b)[:, None]
        return value, dscores


def ordinal_gradient(model, head: OrdinalScoreHead, batch: TrainingBatch):
    """Loss and parameter gradient for a score-regression model."""
    scores, vjp = model.scores_and_vjp(batch.x_t, batch.t)
    value, dscores = head.evaluate(scores, batch)
    return value, vjp(dscores)


def _all_state_logits(model, space: StateSpace, t: float) -> np.ndarray:
    states = space.enumerate_states()
    ts = np.full(states.shape[0], t)
    return model.conditional_logits_batch(states, ts)


def _all_state_logits_vjp(model, space: StateSpace, t: float):
    states = space.enumerate_states()
    ts = np.full(states.shape[0], t)
    return model.logits_and_vjp(states, ts)


def expected_cross_entropy_observed(model, q_t: TabularDistribution, t: float):
    """Exact expectation of the observed-digit cross entropy.

    Sums q_t(x) * sum_d -log p(x^d | rest) over every state.  Returns
    the value and the flat parameter gradient.
    """
    space = q_t.space
    logits, vjp = _all_state_logits_vjp(model, space, t)
    logp = log_softmax(logits, axis=-1)
    digits = space.enumerate_states()
    picked = _batch_gather(logp, digits)
    value = float(np.sum(q_t.probs * -picked.sum(axis=1)))

    p = np.exp(logp)
    dlogits = p.copy()
    bi = np.arange(digits.shape[0])[:, None]
    di = np.arange(space.dims)[None, :]
    dlogits[bi, di, digits] -= 1.0
    dlogits *= q_t.probs[:, None, None]
    return value, vjp(dlogits)


def expected_cross_entropy_soft(model, q_t: TabularDistribution, t: float):
    """Exact cross entropy against the true conditionals.

    The target for dimension d at state x is the exact conditional
    law of x^d given the other digits under q_t.  For leak-free models
    this agrees with `expected_cross_entropy_observed` identically in
    the parameters, which the tests check to 1e-8.
    """
    space = q_t.space
    cond = tabular_conditionals(q_t)
    if np.isnan(cond).any():
        reachable = ~np.isnan(cond)
        cond = np.where(reachable, cond, 0.0)
    logits, vjp = _all_state_logits_vjp(model, space, t)
    logp = log_softmax(logits, axis=-1)
    value = float(np.sum(q_t.probs * -(cond * logp).sum(axis=(1, 2))))

    p = np.exp(logp)
    dlogits = (p - cond) * q_t.probs[:, None, None]
    return value, vjp(dlogits)


def expected_l2(model, q_t: TabularDistribution, t: float, simplified: bool = True):
    """Exact expectation of the squared-probability surrogate.

    With simplified=True the per-dimension term is
    sum_c p(c)^2 - 2 p(x^d); with simplified=False it is the full
    squared distance || p(.) - pi(.) ||^2 to the exact conditional.
    The two differ by sum_x q(x) sum_d ||pi(.|x^rest)||^2, a constant
    in the parameters.
    """
    space = q_t.space
    logits, vjp = _all_state_logits_vjp(model, space, t)
    p = softmax(logits, axis=-1)
    digits = space.enumerate_states()
    bi = np.arange(digits.shape[0])[:, None]
    di = np.arange(space.dims)[None, :]

    if simplified:
        sq = np.sum(p * p, axis=-1)
        p_obs = _batch_gather(p, digits)
        value = float(np.sum(q_t.probs * (sq - 2.0 * p_obs).sum(axis=1)))
        g = 2.0 * p
        g[bi, di, digits] -= 2.0
    else:
        cond = tabular_conditionals(q_t)
        cond = np.where(np.isnan(cond), 0.0, cond)
        diff = p - cond
        value = float(np.sum(q_t.probs * np.sum(diff * diff, axis=(1, 2))))
        g = 2.0 * diff

    inner = np.sum(p * g, axis=-1, keepdims=True)
    dlogits = p * (g - inner) * q_t.probs[:, None, None]
    return value, vjp(dlogits)


def conditional_norm_constant(q_t: TabularDistribution) -> float:
    """The parameter-free gap between the two squared-loss variants."""
    cond = tabular_conditionals(q_t)
    cond = np.where(np.isnan(cond), 0.0, cond)
    return float(np.sum(q_t.probs * np.sum(cond * cond, axis=(1, 2))))


def loss_path_kl_tabular(
    model,
    pi_data: TabularDistribution,
    sched: NoiseSchedule,
    rate: RateSpec,
    t_min: float = 1e-3,
    n_grid: int = 64,
) -> float:
    """Trapezoid estimate of the reverse-path mismatch objective.

    At each grid time t the integrand sums, over states x weighted by
    the exact noisy marginal, the model's total reverse jump rate out
    of x minus the log reverse-rate weighted by the true backward flux
    into x.  It is minimized (over leak-free conditional models) when
    the model conditionals match the exact ones; the value is an
    evaluation target only and offers no per-parameter gradient here.
    Conditionals below 1e-12 are clamped with a warning before the
    logarithm.
    """
    space = pi_data.space
    space.require_tabular()
    if n_grid < 2:
        raise ConfigError("trapezoid grid needs at least 2 points")
    grid = np.linspace(t_min, sched.horizon, n_grid)
    digits = space.enumerate_states()
    n = digits.shape[0]
    bi = np.arange(n)[:, None]
    di = np.arange(space.dims)[None, :]
    fwd = rate.matrix[digits]            # (S, D, C): rate x^d -> c
    into = rate.matrix.T[digits]         # (S, D, C): rate c -> x^d
    offdiag = np.ones((n, space.dims, space.vocab), dtype=bool)
    offdiag[bi, di, digits] = False

    values = np.empty(n_grid)
    for i, t in enumerate(grid):
        q = exact_marginal(pi_data, float(t), sched, rate)
        logits = _all_state_logits(model, space, float(t))
        p = softmax(logits, axis=-1)
        if np.any(p < CONDITIONAL_FLOOR):
            warnings.warn("model conditional below floor, clamping", RuntimeWarning)
            p = np.maximum(p, CONDITIONAL_FLOOR)
        p_own = p[bi, di, digits]
        ratio = p / p_own[:, :, None]
        logratio = np.log(p_own)[:, :, None] - np.log(p)
        beta = float(sched.beta(t))
        per_state = np.sum(
            np.where(offdiag, beta * (fwd * ratio - into * logratio), 0.0),
            axis=(1, 2),
        )
        values[i] = float(np.sum(q.probs * per_state))
    return float(np.trapezoid(values, grid))


LOSS_KINDS = (
    "ce",
    "l2",
    "x0_ce",
    "ordinal_score",
    "ce_exact",
    "ce_exact_soft",
    "l2_exact",
    "l2_exact_full",
    "path_kl",
)


def make_head(kind: str, sched: NoiseSchedule, rate: RateSpec, kspec=None):
    """Build the sampled loss head for one of the per-batch kinds."""
    if kind == "ce":
        return CrossEntropyHead()
    if kind == "l2":
        return L2Head()
    if kind == "x0_ce":
        return DenoisingCrossEntropyHead(sched, rate)
    if kind == "ordinal_score":
        if kspec is None:
            raise ConfigError("ordinal_score needs an OrdinalKernelSpec")
        return OrdinalScoreHead(kspec)
    raise ConfigError(f"no sampled head for loss kind {kind!r}")
