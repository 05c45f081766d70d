"""Exact tabular distributions over enumerable product spaces.

This is the oracle layer: closed-form marginal propagation, exact time
reversal, and the dense helpers (full-space kernels and generators) that the
approximate machinery is tested against.  Everything here is limited to
spaces small enough to enumerate.

Conventions: distributions are flat float64 vectors in lexicographic state
order (first dimension most significant).  Transition tables are indexed
[source, destination].
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .rates import RateSpec, kernel_matrix
from .schedules import NoiseSchedule
from .spaces import StateSpace

# Marginal mass below this is treated as exactly unreachable when reversing.
UNREACHABLE_MASS = 1e-300

_TABULAR_MAGIC = b"RDTB"
_TABULAR_VERSION = 1


@dataclass(frozen=True)
class TabularDistribution:
    space: StateSpace
    probs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        n = self.space.require_tabular()
        if p.shape != (n,):
            raise DomainError(f"probs must have shape ({n},), got {p.shape}")
        if p.min() < 0:
            raise DomainError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise DomainError(f"probabilities sum to {p.sum():.12g}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def tensor(self) -> np.ndarray:
        """probs reshaped to one axis per dimension."""
        return self.probs.reshape((self.space.vocab,) * self.space.dims)

    def prob_of(self, x: np.ndarray):
        return self.probs[self.space.state_to_index(x)]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.space.n_states, size=count, p=self.probs)
        return self.space.index_to_state(idx)

    # -- serialization ------------------------------------------------------

    def save_binary(self, path) -> None:
        desc = json.dumps(
            {"dims": self.space.dims, "vocab": self.space.vocab, "ordinal": self.space.ordinal}
        ).encode()
        payload = self.probs.astype("<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(_TABULAR_MAGIC)
            fh.write(struct.pack("<I", _TABULAR_VERSION))
            fh.write(struct.pack("<I", len(desc)))
            fh.write(desc)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
            fh.write(hashlib.sha256(payload).digest())

    @staticmethod
    def load_binary(path) -> "TabularDistribution":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _TABULAR_MAGIC:
                raise DomainError(f"{path}: not a tabular distribution file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _TABULAR_VERSION:
                raise DomainError(f"{path}: unsupported version {version}")
            (desc_len,) = struct.unpack("<I", fh.read(4))
            desc = json.loads(fh.read(desc_len).decode())
            (payload_len,) = struct.unpack("<Q", fh.read(8))
            payload = fh.read(payload_len)
            digest = fh.read(32)
            if hashlib.sha256(payload).digest() != digest:
                raise NumericError(f"{path}: payload checksum mismatch")
        space = StateSpace(dims=desc["dims"], vocab=desc["vocab"], ordinal=desc["ordinal"])
        probs = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        return TabularDistribution(space=space, probs=probs)

    def save_json(self, path) -> None:
        if self.space.n_states > 65536:
            raise DomainError("JSON dump only supported for small spaces")
        doc = {
            "space": {"dims": self.space.dims, "vocab": self.space.vocab, "ordinal": self.space.ordinal},
            "probs": self.probs.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @staticmethod
    def load_json(path) -> "TabularDistribution":
        with open(path) as fh:
            doc = json.load(fh)
        sp = doc["space"]
        space = StateSpace(dims=sp["dims"], vocab=sp["vocab"], ordinal=sp["ordinal"])
        return TabularDistribution(space=space, probs=np.asarray(doc["probs"]))


def uniform_distribution(space: StateSpace) -> TabularDistribution:
    n = space.require_tabular()
    return TabularDistribution(space=space, probs=np.full(n, 1.0 / n))


def point_mass(space: StateSpace, x: np.ndarray) -> TabularDistribution:
    n = space.require_tabular()
    p = np.zeros(n)
    p[space.state_to_index(np.asarray(x))] = 1.0
    return TabularDistribution(space=space, probs=p)


def distribution_from_weights(space: StateSpace, weights: np.ndarray) -> TabularDistribution:
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if w.min() < 0 or total <= 0:
        raise DomainError("weights must be non-negative with positive sum")
    return TabularDistribution(space=space, probs=w / total)


# -- index arithmetic ------------------------------------------------------


def digit_strides(space: StateSpace) -> np.ndarray:
    """Flat-index stride of each dimension (first dimension largest)."""
    return space.vocab ** np.arange(space.dims - 1, -1, -1, dtype=np.int64)


def substitute_index(space: StateSpace, flat_idx: np.ndarray, digits: np.ndarray) -> np.ndarray:
    """Flat indices of every single-digit substitution.

    Given flat indices (n,) and their digit matrix (n, D), returns an
    (n, D, C) array whose [i, d, c] entry is the index of state i with
    dimension d replaced by value c.
    """
    strides = digit_strides(space)
    base = flat_idx[:, None, None]
    cur = digits[:, :, None] * strides[None, :, None]
    new = np.arange(space.vocab)[None, None, :] * strides[None, :, None]
    return base - cur + new


# -- exact propagation and reversal ----------------------------------------


def exact_marginal(
    pi0: TabularDistribution, t: float, sched: NoiseSchedule, rate: RateSpec
) -> TabularDistribution:
    """Propagate an initial distribution to time t through the forward kernel.

    Contracts the per-dimension kernel along each axis of the probability
    tensor; exact up to the kernel's own accuracy.
    """
    tau = sched.cumulative(0.0, t)
    k = kernel_matrix(rate, tau)
    q = pi0.tensor
    for _ in range(pi0.space.dims):
        q = np.tensordot(q, k, axes=([0], [0]))
    probs = q.reshape(-1)
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise NumericError(f"propagated mass {total:.12g} drifted from 1")
    return TabularDistribution(space=pi0.space, probs=probs / total)


def full_transition_matrix(rate: RateSpec, tau: float, dims: int) -> np.ndarray:
    """Joint transition kernel over the product space (Kronecker power)."""
    k = kernel_matrix(rate, tau)
    full = np.array([[1.0]])
    for _ in range(dims):
        full = np.kron(full, k)
    return full


def full_generator(space: StateSpace, rate: RateSpec) -> np.ndarray:
    """Joint rate matrix over the product space (Kronecker sum of Q's)."""
    n = space.require_tabular()
    c = space.vocab
    gen = np.zeros((n, n))
    for d in range(space.dims):
        left = np.eye(c**d)
        right = np.eye(c ** (space.dims - d - 1))
        gen += np.kron(np.kron(left, rate.matrix), right)
    return gen


def reverse_rate(
    q_t: TabularDistribution,
    rate: RateSpec,
    sched: NoiseSchedule,
    t: float,
    x: np.ndarray,
    y: np.ndarray,
) -> float:
    """Jump intensity of the time-reversed chain from state x to state y.

    Equals the forward rate from y into x weighted by the marginal ratio
    q_t(y)/q_t(x).  States differing in more than one dimension get rate 0.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    diff = np.nonzero(x != y)[0]
    if diff.size != 1:
        return 0.0
    d = int(diff[0])
    qx = float(q_t.prob_of(x))
    qy = float(q_t.prob_of(y))
    if qx < UNREACHABLE_MASS:
        raise NumericError("reverse rate undefined at a zero-probability state")
    beta = float(sched.beta(t))
    return qy / qx * beta * float(rate.matrix[y[d], x[d]])


def reverse_rate_table(
    q_t: TabularDistribution, rate: RateSpec, sched: NoiseSchedule, t: float
) -> np.ndarray:
    """All single-dimension reverse jump rates as an (S, D, C) array.

    Entry [i, d, c] is the reverse rate from state i to state i with digit d
    set to c; the current digit's slot is 0.  States with vanishing marginal
    are left with all-zero rows (unreachable under the reversal).
    """
    space = q_t.space
    n = space.require_tabular()
    digits = space.enumerate_states()
    idx = np.arange(n, dtype=np.int64)
    sub = substitute_index(space, idx, digits)
    q = q_t.probs
    beta = float(sched.beta(t))
    reachable = q >= UNREACHABLE_MASS
    safe_q = np.where(reachable, q, 1.0)
    ratio = q[sub] / safe_q[:, None, None]
    # forward rate from the substituted state back into state i: Q[c, x_i^d]
    q_into = rate.matrix.T[digits]  # [i, d, c] = Q[c, digits[i, d]]
    table = ratio * beta * q_into
    c_axis = np.arange(space.vocab)
    table[digits[:, :, None] == c_axis[None, None, :]] = 0.0
    table[~reachable] = 0.0
    return table


@dataclass(frozen=True)
class ReverseTransitionTable:
    """Exact reverse-step kernel q_{s|t}: rows are time-t states, columns time-s."""

    matrix: np.ndarray
    reachable: np.ndarray  # rows with enough forward mass to condition on

    def row(self, idx: int) -> np.ndarray:
        if not self.reachable[idx]:
            raise NumericError(f"state {idx} unreachable at this time")
        return self.matrix[idx]


def reverse_transition_exact(
    pi0: TabularDistribution, s: float, t: float, sched: NoiseSchedule, rate: RateSpec
) -> ReverseTransitionTable:
    """Exact one-step reversal by Bayes rule on the enumerated space.

    matrix[y, x] = q_s(x) * q_{t|s}(y | x) / q_t(y).
    """
    if s > t:
        raise DomainError("need s <= t")
    q_s = exact_marginal(pi0, s, sched, rate)
    fwd = full_transition_matrix(rate, sched.cumulative(s, t), pi0.space.dims)
    joint = q_s.probs[:, None] * fwd  # [x, y]
    q_t = joint.sum(axis=0)
    reachable = q_t >= UNREACHABLE_MASS
    safe = np.where(reachable, q_t, 1.0)
    matrix = (joint / safe[None, :]).T
    matrix[~reachable] = 0.0
    return ReverseTransitionTable(matrix=matrix, reachable=reachable)
