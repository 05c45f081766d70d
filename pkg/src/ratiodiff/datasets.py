"""Seven 2-D toy densities and Gray-coded binary quantization.

Each generator emits points in the square [-lim, lim]^2 (clamped).  Points are
quantized per axis to ``bits_per_axis`` levels, Gray-encoded, and concatenated
as x-axis bits followed by y-axis bits, giving binary states of dimension
``2 * bits_per_axis``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .spaces import StateSpace, gray_decode_batch, gray_encode_batch

TOY_NAMES = (
    "2spirals",
    "8gaussians",
    "circles",
    "moons",
    "pinwheel",
    "swissroll",
    "checkerboard",
)

DEFAULT_LIM = 4.0


@dataclass(frozen=True)
class ToyDatasetSpec:
    name: str
    bits_per_axis: int = 16
    lim: float = DEFAULT_LIM

    def __post_init__(self) -> None:
        if self.name not in TOY_NAMES:
            raise ConfigError(f"unknown toy dataset {self.name!r}; choose from {TOY_NAMES}")
        if not 2 <= self.bits_per_axis <= 16:
            raise ConfigError("bits_per_axis must be in [2, 16]")
        if self.lim <= 0:
            raise ConfigError("lim must be positive")

    @property
    def space(self) -> StateSpace:
        return StateSpace(dims=2 * self.bits_per_axis, vocab=2)


def _gen_2spirals(n: int, lim: float, rng: np.random.Generator) -> np.ndarray:
    # Two interleaved Archimedean arms r = a*theta, radial noise sigma = 0.1*lim.
    theta_max = 3.0 * np.pi
    a = 0.85 * lim / theta_max
    theta = theta_max * np.sqrt(rng.uniform(size=n))
    r = a * theta + rng.normal(scale=0.1 * lim, size=n)
    arm = rng.integers(0, 2, size=n)  # second arm rotated by pi
    ang = theta + np.pi * arm
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def _gen_8gaussians(n: int, lim: float, rng: np.random.Generator) -> np.ndarray:
    angles = np.pi / 4.0 * rng.integers(0, 8, size=n)
    centers = (lim / 2.0) * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + rng.normal(scale=lim / 20.0, size=(n, 2))


def _gen_circles(n: int, lim: float, rng: np.random.Generator) -> np.ndarray:
    radius = np.where(rng.integers(0, 2, size=n) == 0, lim / 2.0, lim / 4.0)
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    return pts + rng.normal(scale=lim / 40.0, size=(n, 2))


def _gen_moons(n: int, lim: float, rng: np.random.Generator) -> np.ndarray:
    radius = lim / 2.0
    upper = rng.integers(0, 2, size=n) == 0
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(upper, radius * np.cos(t) - radius / 2.0, radius * np.cos(t + np.pi) + radius / 2.0)
    y = np.where(upper, radius * np.sin(t) - lim / 16.0, radius * np.sin(t + np.pi) + lim / 16.0)
    return np.stack([x, y], axis=1) + rng.normal(scale=lim / 40.0, size=(n, 2))


def _gen_pinwheel(n: int, lim: float, rng: np.random.Generator) -> np.ndarray:
    # Five Gaussian blades, tangential shear increasing with radius.
    n_blades = 5
    radial_std, tangential_std, shear = 0.3, 0.05, 0.25
    feats = rng.normal(size=(n, 2)) * np.array([radial_std, tangential_std]) + np.array([1.0, 0.0])
    labels = rng.integers(0, n_blades, size=n)
    ang = labels * 2.0 * np.pi / n_blades + shear * np.exp(feats[:, 0])
    rot_x = feats[:, 0] * np.cos(ang) - feats[:, 1] * np.sin(ang)
    rot_y = feats[:, 0] * np.sin(ang) + feats[:, 1] * np.cos(ang)
    return (lim / 2.0) * np.stack([rot_x, rot_y], axis=1)


def _gen_swissroll(n: int, lim: float, rng: np.random.Generator) -> np.ndarray:
    # Single spiral r = a*theta over 1.5 turns.
    theta = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=n))
    a = 0.85 * lim / (4.5 * np.pi)
    pts = np.stack([a * theta * np.cos(theta), a * theta * np.sin(theta)], axis=1)
    return pts + rng.normal(scale=lim / 40.0, size=(n, 2))


def _gen_checkerboard(n: int, lim: float, rng: np.random.Generator) -> np.ndarray:
    # Uniform over the 8 cells of a 4x4 board where (col + row) is even.
    cell = lim / 2.0
    col = rng.integers(0, 4, size=n)
    row_choice = rng.integers(0, 2, size=n)
    row = 2 * row_choice + (col % 2)  # keeps (col + row) even
    x = -lim + cell * (col + rng.uniform(size=n))
    y = -lim + cell * (row + rng.uniform(size=n))
    return np.stack([x, y], axis=1)


_GENERATORS = {
    "2spirals": _gen_2spirals,
    "8gaussians": _gen_8gaussians,
    "circles": _gen_circles,
    "moons": _gen_moons,
    "pinwheel": _gen_pinwheel,
    "swissroll": _gen_swissroll,
    "checkerboard": _gen_checkerboard,
}


def sample_toy2d(spec: ToyDatasetSpec, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` points from the named density, clamped to the box.

    Deterministic given (spec, count, seed).
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    rng = np.random.default_rng(seed)
    pts = _GENERATORS[spec.name](count, spec.lim, rng)
    return np.clip(pts, -spec.lim, spec.lim)


def quantize2d(points: np.ndarray, spec: ToyDatasetSpec) -> np.ndarray:
    """Map points in the box to Gray-coded binary states.

    Each axis is mapped affinely to an integer level in [0, 2^bits): the cell
    of width 2*lim/2^bits containing the coordinate, with the upper edge
    folded into the top cell.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 2:
        raise DomainError("points must have two coordinates")
    if np.any(np.abs(pts) > spec.lim + 1e-12):
        raise DomainError("point outside bounding box; clamp before quantizing")
    levels = 2**spec.bits_per_axis
    unit = (pts + spec.lim) / (2.0 * spec.lim)
    idx = np.clip(np.floor(unit * levels).astype(np.int64), 0, levels - 1)
    xbits = gray_encode_batch(idx[:, 0], spec.bits_per_axis)
    ybits = gray_encode_batch(idx[:, 1], spec.bits_per_axis)
    states = np.concatenate([xbits, ybits], axis=1)
    return states[0] if single else states


def dequantize2d(states: np.ndarray, spec: ToyDatasetSpec) -> np.ndarray:
    """Decode states back to the centers of their grid cells."""
    st = np.asarray(states)
    single = st.ndim == 1
    st = np.atleast_2d(st)
    bits = spec.bits_per_axis
    if st.shape[1] != 2 * bits:
        raise DomainError(f"state length {st.shape[1]} does not match 2*{bits}")
    ix = gray_decode_batch(st[:, :bits])
    iy = gray_decode_batch(st[:, bits:])
    width = 2.0 * spec.lim / 2**bits
    pts = np.stack(
        [-spec.lim + (ix + 0.5) * width, -spec.lim + (iy + 0.5) * width], axis=1
    )
    return pts[0] if single else pts


def sample_toy_states(spec: ToyDatasetSpec, count: int, seed: int) -> np.ndarray:
    """Convenience: sample points and quantize them in one call."""
    return quantize2d(sample_toy2d(spec, count, seed), spec)


def write_points_csv(path, points: np.ndarray, states: np.ndarray, header_comment: str = "") -> None:
    """Dump real points plus their binary states: columns x, y, state."""
    states = np.asarray(states)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "state"])
        for p, s in zip(np.atleast_2d(points), np.atleast_2d(states)):
            writer.writerow([f"{p[0]:.9g}", f"{p[1]:.9g}", "".join(str(int(b)) for b in s)])


def read_states_csv(path) -> np.ndarray:
    """Read the `state` column written by :func:`write_points_csv`."""
    rows = []
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or "state" not in reader.fieldnames:
            raise DomainError(f"{path}: missing 'state' column")
        for rec in reader:
            rows.append([int(ch) for ch in rec["state"]])
    if not rows:
        raise DomainError(f"{path}: no states found")
    return np.asarray(rows, dtype=np.int64)
