"""Base rate matrices and per-dimension transition kernels.

A rate matrix Q has zero row sums and non-negative off-diagonals; the forward
process applies Q scaled by the schedule, independently per dimension.  The
transition kernel over an interval with accumulated noise tau is exp(Q*tau).

For the uniform rate (all-ones minus C on the diagonal) the exponential has
the closed form

    stay  = 1/C + (1 - 1/C) * exp(-C*tau)
    move  = (1/C) * (1 - exp(-C*tau))        (to each other value)

since Q projects onto the uniform vector with eigenvalues 0 and -C.  General
matrices go through scaling-and-squaring with a truncated Taylor series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError

_TAYLOR_ORDER = 12
_SCALING_TARGET = 0.5  # 1-norm of the scaled matrix


@dataclass(frozen=True)
class RateSpec:
    vocab: int
    matrix: np.ndarray = field(repr=False)
    uniform: bool = False

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (self.vocab, self.vocab):
            raise DomainError(f"rate matrix must be {self.vocab}x{self.vocab}")
        if np.max(np.abs(m.sum(axis=1))) > 1e-12:
            raise DomainError("rate matrix rows must sum to 0")
        off = m - np.diag(np.diag(m))
        if off.min() < 0:
            raise DomainError("off-diagonal rates must be non-negative")
        object.__setattr__(self, "matrix", m)


def uniform_rate(vocab: int) -> RateSpec:
    """The uniform-stationary rate: every off-diagonal entry 1, diagonal 1-C."""
    if vocab < 2:
        raise DomainError("vocab must be >= 2")
    q = np.ones((vocab, vocab)) - vocab * np.eye(vocab)
    return RateSpec(vocab=vocab, matrix=q, uniform=True)


def uniform_transition_row(vocab: int, tau: float) -> tuple[float, float]:
    """(stay_prob, move_prob_per_value) for the uniform rate at noise tau."""
    if tau < 0:
        raise DomainError("tau must be >= 0")
    if vocab < 2:
        raise DomainError("vocab must be >= 2")
    decay = np.exp(-vocab * tau)
    stay = 1.0 / vocab + (1.0 - 1.0 / vocab) * decay
    move = (1.0 - decay) / vocab
    return float(stay), float(move)


def transition_matrix_general(rate: RateSpec, tau: float) -> np.ndarray:
    """exp(Q*tau) by scaling-and-squaring of a truncated Taylor series."""
    if tau < 0:
        raise DomainError("tau must be >= 0")
    a = rate.matrix * tau
    norm1 = float(np.abs(a).sum(axis=0).max())
    squarings = 0
    if norm1 > _SCALING_TARGET:
        squarings = int(np.ceil(np.log2(norm1 / _SCALING_TARGET)))
        a = a / (2.0**squarings)
    result = np.eye(rate.vocab)
    term = np.eye(rate.vocab)
    for k in range(1, _TAYLOR_ORDER + 1):
        term = term @ a / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    if not np.all(np.isfinite(result)):
        raise NumericError("matrix exponential produced non-finite entries")
    return result


def kernel_matrix(rate: RateSpec, tau: float) -> np.ndarray:
    """Per-dimension transition kernel over accumulated noise tau.

    Row index is the source value, column the destination.  Uniform rates use
    the closed form; everything else the series exponential.
    """
    if rate.uniform:
        stay, move = uniform_transition_row(rate.vocab, tau)
        k = np.full((rate.vocab, rate.vocab), move)
        np.fill_diagonal(k, stay)
        return k
    return transition_matrix_general(rate, tau)
