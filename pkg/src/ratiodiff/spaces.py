"""Finite product state spaces and integer codecs.

A state is a vector of ``dims`` digits, each in ``range(vocab)``.  Batches are
``(n, dims)`` int arrays.  Flat indices are lexicographic with the first
dimension most significant, so for vocab 2, dims 2 the order is
(0,0), (0,1), (1,0), (1,1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError

# Hard cap on enumerable spaces: exact tabular work beyond this would not fit
# in memory as dense float64 anyway.
MAX_TABULAR_STATES = 2**24


@dataclass(frozen=True)
class StateSpace:
    """Product space {0..vocab-1}^dims.

    Args:
        dims: number of positions (called D elsewhere).
        vocab: number of values per position (called C elsewhere).
        ordinal: whether neighboring values are semantically adjacent
            (integer range); enables birth/death moves.
    """

    dims: int
    vocab: int
    ordinal: bool = False

    def __post_init__(self) -> None:
        if self.dims < 1 or self.vocab < 2:
            raise DomainError(
                f"need dims >= 1 and vocab >= 2, got dims={self.dims} vocab={self.vocab}"
            )

    @property
    def n_states(self) -> int:
        return self.vocab**self.dims

    def require_tabular(self) -> int:
        """Return n_states, or raise if the space is too large to enumerate."""
        n = self.n_states
        if n > MAX_TABULAR_STATES:
            raise CapacityError(
                f"space has {self.vocab}^{self.dims} states; exact tabular ops "
                f"are capped at {MAX_TABULAR_STATES}"
            )
        return n

    def validate_states(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1] != self.dims:
            raise DomainError(f"state has last axis {x.shape[-1]}, expected {self.dims}")
        if not np.issubdtype(x.dtype, np.integer):
            raise DomainError(f"states must be integer typed, got {x.dtype}")
        if x.size and (x.min() < 0 or x.max() >= self.vocab):
            raise DomainError(f"state digits outside [0, {self.vocab})")
        return x

    def state_to_index(self, x: np.ndarray) -> np.ndarray:
        """Flat lexicographic index; works on (dims,) or (n, dims) arrays."""
        x = self.validate_states(x)
        weights = self.vocab ** np.arange(self.dims - 1, -1, -1, dtype=np.int64)
        return np.asarray(x, dtype=np.int64) @ weights

    def index_to_state(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_states):
            raise DomainError("flat index out of range")
        digits = []
        rem = idx
        for _ in range(self.dims):
            digits.append(rem % self.vocab)
            rem = rem // self.vocab
        return np.stack(digits[::-1], axis=-1)

    def enumerate_states(self) -> np.ndarray:
        """All states as an (n_states, dims) array in flat-index order."""
        n = self.require_tabular()
        return self.index_to_state(np.arange(n))


def gray_encode(n: int, bits: int) -> np.ndarray:
    """Encode integer ``n`` as a reflected-binary code word, MSB first.

    Consecutive integers map to words differing in exactly one bit, which is
    what makes the 2-D quantizer produce Hamming-smooth neighborhoods.
    """
    if bits < 1:
        raise DomainError("bits must be >= 1")
    if not 0 <= n < 2**bits:
        raise DomainError(f"n={n} outside [0, 2^{bits})")
    g = n ^ (n >> 1)
    return np.array([(g >> i) & 1 for i in range(bits - 1, -1, -1)], dtype=np.int64)


def gray_decode(word: np.ndarray) -> int:
    """Inverse of :func:`gray_encode` for an MSB-first bit vector."""
    word = np.asarray(word)
    if word.ndim != 1 or word.size < 1:
        raise DomainError("code word must be a 1-d bit vector")
    if np.any((word != 0) & (word != 1)):
        raise DomainError("code word bits must be 0 or 1")
    n = 0
    bit = 0
    for b in word:
        bit ^= int(b)
        n = (n << 1) | bit
    return n


def gray_encode_batch(ns: np.ndarray, bits: int) -> np.ndarray:
    """Vectorized gray_encode: (n,) integers -> (n, bits) bit matrix."""
    ns = np.asarray(ns, dtype=np.int64)
    if ns.size and (ns.min() < 0 or ns.max() >= 2**bits):
        raise DomainError(f"values outside [0, 2^{bits})")
    g = ns ^ (ns >> 1)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.int64)
    return (g[..., None] >> shifts) & 1


def gray_decode_batch(words: np.ndarray) -> np.ndarray:
    """Vectorized gray_decode: (n, bits) bit matrix -> (n,) integers."""
    words = np.asarray(words, dtype=np.int64)
    bits = np.cumsum(words, axis=-1) % 2  # prefix XOR of 0/1 bits
    shifts = np.arange(words.shape[-1] - 1, -1, -1, dtype=np.int64)
    return (bits << shifts).sum(axis=-1)
