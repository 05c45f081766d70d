"""Forward-process simulation: closed-form jumps and exact event-driven paths.

The forward chain factorizes over dimensions, so a terminal state can be
drawn directly from the per-dimension kernel (forward_sample) or the full
event history can be generated exactly with a time-rescaled Gillespie loop
(gillespie_forward): waiting times are exponential in accumulated noise, so
each event time solves cumulative_rate(s, t*) = E / leave_coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .rates import RateSpec, kernel_matrix
from .schedules import NoiseSchedule
from .spaces import StateSpace


@dataclass(frozen=True)
class Trajectory:
    initial: np.ndarray
    events: list = field(default_factory=list)  # (time, dim, new_value), time-ordered

    def __post_init__(self) -> None:
        last = -np.inf
        value = np.asarray(self.initial).copy()
        for when, dim, new in self.events:
            if when <= last:
                raise DomainError("event times must be strictly increasing")
            if value[dim] == new:
                raise DomainError("event must change the dimension's value")
            value[dim] = new
            last = when

    def state_at(self, t: float) -> np.ndarray:
        value = np.asarray(self.initial).copy()
        for when, dim, new in self.events:
            if when > t:
                break
            value[dim] = new
        return value

    @property
    def terminal(self) -> np.ndarray:
        return self.state_at(np.inf)


def forward_sample(
    x0: np.ndarray,
    s: float,
    t: float,
    sched: NoiseSchedule,
    rate: RateSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw X_t given X_s = x0: each dimension moves by the interval kernel.

    Accepts a single state (D,) or a batch (n, D).
    """
    if t < s:
        raise DomainError("need s <= t")
    x0 = np.asarray(x0)
    single = x0.ndim == 1
    xs = np.atleast_2d(x0)
    k = kernel_matrix(rate, sched.cumulative(s, t))
    rows = k[xs]  # (n, D, C)
    u = rng.uniform(size=xs.shape)
    out = (rows.cumsum(axis=-1) < u[..., None]).sum(axis=-1)
    out = np.minimum(out, rate.vocab - 1).astype(np.int64)
    return out[0] if single else out


def forward_sample_at_times(
    x0: np.ndarray,
    ts: np.ndarray,
    sched: NoiseSchedule,
    rate: RateSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batch version with an independent time per row: X_{ts[i]} | X_0 = x0[i]."""
    xs = np.atleast_2d(np.asarray(x0))
    ts = np.asarray(ts, dtype=np.float64)
    if ts.shape != (xs.shape[0],):
        raise DomainError("need one time per state")
    taus = sched.cumulative(np.zeros_like(ts), ts)
    if rate.uniform:
        # closed form per row: keep the value with prob e^{-C tau}, otherwise
        # resample uniformly over all C values (which may land back on it)
        decay = np.exp(-rate.vocab * taus)[:, None]
        resample = rng.uniform(size=xs.shape) >= decay
        random_values = rng.integers(0, rate.vocab, size=xs.shape)
        return np.where(resample, random_values, xs)
    out = np.empty_like(xs)
    for i in range(xs.shape[0]):
        out[i] = forward_sample(xs[i], 0.0, float(ts[i]), sched, rate, rng)
    return out


def gillespie_forward(
    x0: np.ndarray,
    sched: NoiseSchedule,
    rate: RateSpec,
    horizon: float,
    rng: np.random.Generator,
) -> Trajectory:
    """Exact event-driven simulation of the forward chain on [0, horizon].

    The joint leave intensity at time t from state x is
    beta(t) * sum_d -Q[x^d, x^d]; waiting times come from inverting the
    schedule integral against a unit exponential, so no thinning is needed.
    """
    x = np.asarray(x0).copy()
    dims = x.shape[0]
    events = []
    now = 0.0
    neg_diag = -np.diag(rate.matrix)
    while True:
        leave_coeff = float(neg_diag[x].sum())
        if leave_coeff <= 0:
            break
        target = rng.exponential() / leave_coeff
        t_star = sched.invert_cumulative(now, target)
        if t_star > horizon or not np.isfinite(t_star):
            break
        # which dimension jumps: proportional to its leave rate
        weights = neg_diag[x] / leave_coeff
        d = int(rng.choice(dims, p=weights))
        row = rate.matrix[x[d]].copy()
        row[x[d]] = 0.0
        new_value = int(rng.choice(rate.vocab, p=row / row.sum()))
        events.append((t_star, d, new_value))
        x[d] = new_value
        now = t_star
    return Trajectory(initial=np.asarray(x0).copy(), events=events)


def gillespie_forward_terminal(
    x0s: np.ndarray,
    sched: NoiseSchedule,
    rate: RateSpec,
    horizon: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Terminal states of many independent exact simulations, vectorized.

    Exploits the per-dimension independence of the forward chain: every
    (path, dimension) pair is its own one-dimensional jump process, advanced
    in synchronized rounds until all have passed the horizon.
    """
    xs = np.atleast_2d(np.asarray(x0s)).copy()
    n, dims = xs.shape
    clock = np.zeros((n, dims))
    active = np.ones((n, dims), dtype=bool)
    neg_diag = -np.diag(rate.matrix)
    move = rate.matrix.copy()
    np.fill_diagonal(move, 0.0)
    move_cdf = np.cumsum(move / move.sum(axis=1, keepdims=True), axis=1)
    while active.any():
        flat = np.nonzero(active.reshape(-1))[0]
        cur = xs.reshape(-1)[flat]
        rates_here = neg_diag[cur]
        frozen = rates_here <= 0  # absorbing value: never jumps again
        targets = rng.exponential(size=flat.size) / np.where(frozen, 1.0, rates_here)
        targets[frozen] = np.inf
        starts = clock.reshape(-1)[flat]
        if sched.kind == "constant":
            t_next = starts + targets / sched.base_rate
        else:
            t_next = np.array(
                [sched.invert_cumulative(float(s0), float(tg)) for s0, tg in zip(starts, targets)]
            )
        landed = t_next <= horizon
        done = flat[~landed]
        active.reshape(-1)[done] = False
        hit = flat[landed]
        if hit.size:
            u = rng.uniform(size=hit.size)
            new_vals = (move_cdf[cur[landed]] < u[:, None]).sum(axis=1)
            xs.reshape(-1)[hit] = np.minimum(new_vals, rate.vocab - 1)
            clock.reshape(-1)[hit] = t_next[landed]
    return xs
