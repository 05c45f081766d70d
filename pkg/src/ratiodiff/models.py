"""Conditional-marginal model contract, exact realizations, and model ops.

A conditional-marginal model maps (state, time) to one length-C logit vector
per dimension, subject to leak-freedom: the d-th logits never depend on the
state's own d-th digit.  A model is either a noisy-marginal model (its
softmax approximates the current conditionals of q_t) or an x0-denoising
model (approximating the conditional posterior over the clean digit), fixed
at construction via ``mode``.

This module provides the exact tabular realizations used as oracles, the
conditional-chain ratio machinery, empirical leak checking, gradient wiring
for the trainable nets, and the checkpoint format.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import ConfigError, DomainError, NumericError
from .nets import (
    EnergyModel,
    HollowModel,
    MaskedModel,
    OrdinalScoreModel,
    TabularModel,
    _ModelBase,
)
from .rates import RateSpec, kernel_matrix
from .schedules import NoiseSchedule
from .spaces import StateSpace
from .tabular import TabularDistribution, exact_marginal, substitute_index

LOG_FLOOR = 1e-300  # probabilities below this produce the floor logit


def tabular_conditionals(q: TabularDistribution) -> np.ndarray:
    """Exact conditional table: entry [i, d, c] is P(X^d = c | x_i without d).

    Rows are indexed by full states for convenience; the value of digit d in
    x_i does not influence row (i, d).  Slices with zero total mass are
    returned as NaN (undefined conditional).
    """
    space = q.space
    n = space.require_tabular()
    digits = space.enumerate_states()
    sub = substitute_index(space, np.arange(n, dtype=np.int64), digits)
    vals = q.probs[sub]  # (S, D, C)
    totals = vals.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(totals > 0, vals / totals, np.nan)
    return cond


def conditional_logits_from_probs(cond: np.ndarray) -> np.ndarray:
    """Log of a conditional table with a finite floor for zero entries."""
    return np.log(np.maximum(cond, LOG_FLOOR))


def ratio_via_conditional_chain(
    space: StateSpace, cond: np.ndarray, x: np.ndarray, y: np.ndarray
) -> float:
    """q(y)/q(x) as a telescoping product of singleton-conditional ratios.

    Walks dimensions left to right through hybrid states that take the first
    d digits from x and the rest from y, so each factor is a ratio of two
    entries in the same conditional row.  Exact for strictly positive q.
    """
    x = space.validate_states(np.asarray(x))
    y = space.validate_states(np.asarray(y))
    z = y.copy()
    ratio = 1.0
    for d in range(space.dims):
        idx = int(space.state_to_index(z))
        num = cond[idx, d, y[d]]
        den = cond[idx, d, x[d]]
        if not np.isfinite(num) or not np.isfinite(den) or den <= 0.0 or num <= 0.0:
            raise NumericError(
                f"zero or undefined conditional at dimension {d}; chain ratio needs strictly positive mass"
            )
        ratio *= float(num) / float(den)
        z[d] = x[d]
    return ratio


def reconstruct_from_conditionals(space: StateSpace, cond: np.ndarray) -> np.ndarray:
    """Rebuild the full distribution from its conditional table.

    Chains every state against a fixed reference and renormalizes; inverse of
    :func:`tabular_conditionals` for strictly positive distributions.
    """
    n = space.require_tabular()
    states = space.enumerate_states()
    ref = states[0]
    ratios = np.array(
        [ratio_via_conditional_chain(space, cond, ref, states[i]) for i in range(n)]
    )
    return ratios / ratios.sum()


class ExactTabularModel(_ModelBase):
    """Oracle realization: exact conditionals of the forward process.

    In noisy-marginal mode returns log of the exact conditionals of q_t; in
    x0-denoising mode returns log of the exact posterior over the clean digit
    given the other noisy digits.  Tables are cached per queried time.
    """

    kind = "exact_tabular"

    def __init__(
        self,
        pi0: TabularDistribution,
        sched: NoiseSchedule,
        rate: RateSpec,
        mode: str = "noisy_marginal",
    ) -> None:
        self._init_common(pi0.space, mode, sched.horizon)
        self.pi0 = pi0
        self.sched = sched
        self.rate = rate
        self._cache: dict[float, np.ndarray] = {}

    def logits_table(self, t: float) -> np.ndarray:
        key = float(t)
        if key not in self._cache:
            if self.mode == "noisy_marginal":
                cond = tabular_conditionals(exact_marginal(self.pi0, key, self.sched, self.rate))
            else:
                cond = self._x0_posterior_table(key)
            self._cache[key] = conditional_logits_from_probs(cond)
        return self._cache[key]

    def _x0_posterior_table(self, t: float) -> np.ndarray:
        """P(X_0^d = c | noisy digits other than d) for every state row.

        Uses a joint kernel with the d-th factor replaced by all-ones, which
        marginalizes out that dimension's own noisy digit: the weight of
        (clean state j, noisy state i) excluding dimension d is
        pi0(j) * prod_{e != d} K[j_e, i_e].
        """
        space = self.space
        c = space.vocab
        k = kernel_matrix(self.rate, self.sched.cumulative(0.0, t))
        n = space.n_states
        digits = space.enumerate_states()
        out = np.empty((n, space.dims, c))
        for d in range(space.dims):
            partial = np.array([[1.0]])
            for e in range(space.dims):
                partial = np.kron(partial, np.ones((c, c)) if e == d else k)
            selector = np.stack(
                [np.where(digits[:, d] == c0, self.pi0.probs, 0.0) for c0 in range(c)]
            )  # (C, S): clean mass restricted to each clean value of digit d
            grid = (selector @ partial).T  # (S, C)
            totals = grid.sum(axis=1, keepdims=True)
            out[:, d, :] = np.where(totals > 0, grid / totals, np.nan)
        return out

    def conditional_logits_batch(self, xs: np.ndarray, ts) -> np.ndarray:
        xs, ts = self._batch_times(xs, ts)
        idx = self.space.state_to_index(xs)
        out = np.empty((xs.shape[0], self.space.dims, self.space.vocab))
        for t in np.unique(ts):
            mask = ts == t
            out[mask] = self.logits_table(float(t))[idx[mask]]
        return out

    def logits_and_vjp(self, xs, ts):
        logits = self.conditional_logits_batch(xs, ts)

        def vjp(dlogits):
            return np.zeros(0)

        return logits, vjp


# -- single-dimension logit helpers ------------------------------------------


def ebm_conditional_logits(model: EnergyModel, x: np.ndarray, t: float, d: int) -> np.ndarray:
    """Length-C logits for dimension d: negated energies of the substitutions."""
    return model.conditional_logits(x, t)[d]


def masked_conditional_logits(model: MaskedModel, x: np.ndarray, t: float, d: int) -> np.ndarray:
    return model.conditional_logits(x, t)[d]


def hollow_conditional_logits(model: HollowModel, x: np.ndarray, t: float) -> np.ndarray:
    """All D logit rows in a single pass."""
    return model.conditional_logits(x, t)


# -- leak checking -----------------------------------------------------------


class LeakReport:
    def __init__(self, trials: int, max_deviation: float, violations: int) -> None:
        self.trials = trials
        self.max_deviation = max_deviation
        self.violations = violations

    @property
    def clean(self) -> bool:
        return self.violations == 0

    def __repr__(self) -> str:
        return (
            f"LeakReport(trials={self.trials}, max_deviation={self.max_deviation:.3g}, "
            f"violations={self.violations})"
        )


def leak_check(model, trials: int, rng: np.random.Generator, t_max: float | None = None) -> LeakReport:
    """Probe leak-freedom: replace one digit and compare that digit's logits.

    Any nonzero deviation is a violation; the contract demands exact equality.
    """
    space = model.space
    t_hi = model.horizon if t_max is None else t_max
    xs = rng.integers(0, space.vocab, size=(trials, space.dims))
    ts = rng.uniform(0.0, t_hi, size=trials)
    ds = rng.integers(0, space.dims, size=trials)
    shifts = rng.integers(1, space.vocab, size=trials)
    ys = xs.copy()
    rows = np.arange(trials)
    ys[rows, ds] = (xs[rows, ds] + shifts) % space.vocab
    before = model.conditional_logits_batch(xs, ts)[rows, ds]
    after = model.conditional_logits_batch(ys, ts)[rows, ds]
    dev = np.abs(before - after)
    max_dev = float(dev.max()) if trials else 0.0
    return LeakReport(trials=trials, max_deviation=max_dev, violations=int((dev.max(axis=1) > 0).sum()))


# -- gradient wiring ---------------------------------------------------------


def backprop_gradient(model, loss_head, batch) -> tuple[float, np.ndarray]:
    """Loss value and exact flat-parameter gradient for one batch.

    The loss head turns logits into (value, d value / d logits); the model's
    VJP turns that into parameter space.
    """
    logits, vjp = model.logits_and_vjp(batch.x_t, batch.t)
    value, dlogits = loss_head.evaluate(logits, batch)
    return float(value), vjp(dlogits)


# -- checkpoints --------------------------------------------------------------

_CKPT_MAGIC = b"RDCK"
_CKPT_VERSION = 1

MODEL_KINDS = {
    "energy": EnergyModel,
    "masked": MaskedModel,
    "hollow": HollowModel,
    "tabular": TabularModel,
    "ordinal_score": OrdinalScoreModel,
}


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    """Versioned binary: magic, descriptor JSON, flat float64 params, checksum."""
    desc = dict(model.descriptor())
    if extra:
        desc["extra"] = extra
    blob = json.dumps(desc, sort_keys=True).encode()
    payload = model.flat_params().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def read_checkpoint_descriptor(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise DomainError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise DomainError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(blob_len).decode())


def load_checkpoint(path):
    """Rebuild the model named in the descriptor and restore its parameters."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise DomainError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise DomainError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        desc = json.loads(fh.read(blob_len).decode())
        (payload_len,) = struct.unpack("<Q", fh.read(8))
        payload = fh.read(payload_len)
        digest = fh.read(32)
    if hashlib.sha256(payload).digest() != digest:
        raise NumericError(f"{path}: parameter checksum mismatch")
    kind = desc.get("kind")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"{path}: unknown model kind {kind!r}")
    space = StateSpace(dims=desc["dims"], vocab=desc["vocab"], ordinal=desc["ordinal"])
    cls = MODEL_KINDS[kind]
    kwargs = {"horizon": desc["horizon"]}
    if kind in ("energy", "masked"):
        kwargs.update(hidden=tuple(desc["hidden"]), mode=desc["mode"])
    elif kind == "hollow":
        kwargs.update(
            stream_width=desc["stream_width"], n_layers=desc["n_layers"], mode=desc["mode"]
        )
    elif kind == "tabular":
        kwargs.update(n_time_bins=desc["n_time_bins"], mode=desc["mode"])
    elif kind == "ordinal_score":
        kwargs.update(hidden=tuple(desc["hidden"]))
    model = cls(space, **kwargs)
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if params.shape != (model.n_params,):
        raise DomainError(
            f"{path}: parameter count {params.size} does not match architecture ({model.n_params})"
        )
    model.set_flat_params(params)
    return model, desc
