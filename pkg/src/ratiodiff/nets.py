"""Trainable conditional models with a self-contained gradient engine.

Each architecture evaluates per-dimension conditional logits in batch and
exposes a vector-Jacobian product against its flat parameter vector, which is
all the training losses need.  The dense math is plain numpy; backward passes
are written out by hand per architecture.

Architectures:
    EnergyModel     scalar energy MLP; logits over a dimension are negated
                    energies of the value substitutions (C evaluations).
    MaskedModel     MLP over a masked copy of the state (extra mask token);
                    one pass per dimension.
    HollowModel     two directional masked-dense streams combined by a
                    per-position readout, so each position's logits never see
                    that position's input; all dimensions in one pass.
    TabularModel    trainable time-binned conditional table (small spaces).
    OrdinalScoreModel  scalar-per-dimension regressor for ordinal ratios
                    (not bound by the leak-freedom contract).

The leak-freedom invariant (d-th logits never depend on x^d) holds by
construction for the first four; `models.leak_check` verifies it empirically.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainError, NumericError
from .spaces import StateSpace

TIME_FEATURE_DIM = 64
MODES = ("noisy_marginal", "x0_denoising")


def time_features(ts: np.ndarray, horizon: float = 1.0, n_features: int = TIME_FEATURE_DIM) -> np.ndarray:
    """Sinusoidal features of t/horizon at geometric frequencies in [1, 1e4]."""
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    half = n_features // 2
    freqs = np.geomspace(1.0, 1e4, half)
    ang = (ts / horizon)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def glorot_uniform(shape: tuple, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


class ParameterStore:
    """Ordered named arrays with a stable flat view."""

    def __init__(self) -> None:
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._arrays:
            raise ConfigError(f"duplicate parameter {name!r}")
        self._arrays[name] = np.asarray(array, dtype=np.float64)
        return self._arrays[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._arrays:
            raise ConfigError(f"unknown parameter {name!r}")
        if value.shape != self._arrays[name].shape:
            raise DomainError(f"shape mismatch for {name!r}")
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def layout(self) -> list[tuple[str, tuple]]:
        return [(name, arr.shape) for name, arr in self._arrays.items()]

    @property
    def size(self) -> int:
        return sum(arr.size for arr in self._arrays.values())

    def flat(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([arr.ravel() for arr in self._arrays.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise DomainError(f"flat vector must have length {self.size}")
        offset = 0
        for name, arr in self._arrays.items():
            n = arr.size
            self._arrays[name] = vec[offset : offset + n].reshape(arr.shape).copy()
            offset += n

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        parts = []
        for name, arr in self._arrays.items():
            g = grads.get(name)
            parts.append(np.zeros(arr.size) if g is None else np.asarray(g).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


def _check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr


class _DenseStack:
    """Shared MLP plumbing: hidden elu layers, optional per-layer time injection.

    Parameters live in the owner's store under `prefix`.  The forward pass
    returns a cache for the matching backward pass.
    """

    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        in_dim: int,
        hidden: tuple,
        out_dim: int,
        rng: np.random.Generator,
        time_inject: bool,
        zero_readout: bool = True,
    ) -> None:
        self.store = store
        self.prefix = prefix
        self.hidden = tuple(hidden)
        self.time_inject = time_inject
        dims = [in_dim, *hidden]
        for i in range(len(hidden)):
            store.add(f"{prefix}w{i}", glorot_uniform((dims[i], dims[i + 1]), dims[i], dims[i + 1], rng))
            store.add(f"{prefix}b{i}", np.zeros(dims[i + 1]))
            if time_inject:
                store.add(
                    f"{prefix}t{i}",
                    glorot_uniform((TIME_FEATURE_DIM, dims[i + 1]), TIME_FEATURE_DIM, dims[i + 1], rng),
                )
        if zero_readout:
            store.add(f"{prefix}w_out", np.zeros((dims[-1], out_dim)))
        else:
            store.add(f"{prefix}w_out", glorot_uniform((dims[-1], out_dim), dims[-1], out_dim, rng))
        store.add(f"{prefix}b_out", np.zeros(out_dim))

    def forward(self, x: np.ndarray, tfeat: np.ndarray | None):
        s, p = self.store, self.prefix
        cache = {"inputs": [], "pre": [], "tfeat": tfeat}
        h = x
        for i in range(len(self.hidden)):
            cache["inputs"].append(h)
            z = h @ s[f"{p}w{i}"] + s[f"{p}b{i}"]
            if self.time_inject:
                z = z + tfeat @ s[f"{p}t{i}"]
            cache["pre"].append(z)
            h = elu(z)
        cache["inputs"].append(h)
        out = h @ s[f"{p}w_out"] + s[f"{p}b_out"]
        return _check_finite(f"{p}output", out), cache

    def backward(self, d_out: np.ndarray, cache: dict, grads: dict) -> None:
        s, p = self.store, self.prefix
        h_last = cache["inputs"][-1]
        grads[f"{p}w_out"] = h_last.T @ d_out
        grads[f"{p}b_out"] = d_out.sum(axis=0)
        dh = d_out @ s[f"{p}w_out"].T
        for i in range(len(self.hidden) - 1, -1, -1):
            dz = dh * elu_grad(cache["pre"][i])
            grads[f"{p}w{i}"] = cache["inputs"][i].T @ dz
            grads[f"{p}b{i}"] = dz.sum(axis=0)
            if self.time_inject:
                grads[f"{p}t{i}"] = cache["tfeat"].T @ dz
            dh = dz @ s[f"{p}w{i}"].T


class _ModelBase:
    """Common surface: flat params, descriptors, single-state convenience."""

    space: StateSpace
    mode: str
    horizon: float
    store: ParameterStore

    def _init_common(self, space: StateSpace, mode: str, horizon: float) -> None:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        self.space = space
        self.mode = mode
        self.horizon = float(horizon)
        self.store = ParameterStore()

    @property
    def n_params(self) -> int:
        return self.store.size

    def flat_params(self) -> np.ndarray:
        return self.store.flat()

    def set_flat_params(self, vec: np.ndarray) -> None:
        self.store.set_flat(vec)

    def parameter_layout(self) -> list[tuple[str, tuple]]:
        return self.store.layout()

    def conditional_logits(self, x: np.ndarray, t: float) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(x))
        logits = self.conditional_logits_batch(xs, np.full(xs.shape[0], float(t)))
        return logits[0]

    def conditional_logits_batch(self, xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
        logits, _ = self.logits_and_vjp(xs, ts)
        return logits

    def _batch_times(self, xs: np.ndarray, ts) -> tuple[np.ndarray, np.ndarray]:
        xs = self.space.validate_states(np.atleast_2d(xs))
        ts = np.asarray(ts, dtype=np.float64)
        if ts.ndim == 0:
            ts = np.full(xs.shape[0], float(ts))
        if ts.shape != (xs.shape[0],):
            raise DomainError("need one time per batch row")
        return xs, ts


class EnergyModel(_ModelBase):
    """Scalar-energy MLP over one-hot states with time injected per layer.

    Conditional logits for dimension d are the negated energies of the C
    single-dimension substitutions; only 1 + D*(C-1) distinct rows are
    evaluated per state since substituting the current value is the state
    itself.
    """

    kind = "energy"

    def __init__(
        self,
        space: StateSpace,
        hidden: tuple = (256, 256, 256),
        mode: str = "noisy_marginal",
        horizon: float = 1.0,
        seed: int = 0,
    ) -> None:
        self._init_common(space, mode, horizon)
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        self.stack = _DenseStack(
            self.store,
            "mlp/",
            in_dim=space.dims * space.vocab,
            hidden=self.hidden,
            out_dim=1,
            rng=rng,
            time_inject=True,
        )

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "dims": self.space.dims,
            "vocab": self.space.vocab,
            "ordinal": self.space.ordinal,
            "hidden": list(self.hidden),
            "mode": self.mode,
            "horizon": self.horizon,
        }

    def _onehot(self, xs: np.ndarray) -> np.ndarray:
        eye = np.eye(self.space.vocab)
        return eye[xs].reshape(xs.shape[0], -1)

    def energy(self, xs: np.ndarray, ts) -> np.ndarray:
        xs, ts = self._batch_times(xs, ts)
        out, _ = self.stack.forward(self._onehot(xs), time_features(ts, self.horizon))
        return out[:, 0]

    def logits_and_vjp(self, xs: np.ndarray, ts):
        xs, ts = self._batch_times(xs, ts)
        b, d = xs.shape
        c = self.space.vocab
        # rows: B base states then B*D*(C-1) substitutions in (b, d, c') order
        off_values = np.stack([np.delete(np.arange(c), v) for v in range(c)])  # (C, C-1)
        new_vals = off_values[xs]  # (B, D, C-1)
        subs = np.broadcast_to(xs[:, None, None, :], (b, d, c - 1, d)).copy()
        ib, idim, ic = np.meshgrid(np.arange(b), np.arange(d), np.arange(c - 1), indexing="ij")
        subs[ib, idim, ic, idim] = new_vals

        rows = np.concatenate([xs, subs.reshape(-1, d)], axis=0)
        tfeat = time_features(ts, self.horizon)
        tfeat_rows = np.concatenate([tfeat, np.repeat(tfeat, d * (c - 1), axis=0)], axis=0)
        energies, cache = self.stack.forward(self._onehot(rows), tfeat_rows)
        energies = energies[:, 0]

        logits = np.empty((b, d, c))
        own = xs  # substituting the current value reproduces the base state
        flat_sub = energies[b:].reshape(b, d, c - 1)
        bi2, di2 = np.meshgrid(np.arange(b), np.arange(d), indexing="ij")
        logits[bi2[..., None], di2[..., None], new_vals] = -flat_sub
        logits[bi2, di2, own] = -energies[:b, None].repeat(d, axis=1)

        def vjp(dlogits: np.ndarray) -> np.ndarray:
            de = np.zeros(b + b * d * (c - 1))
            d_own = dlogits[bi2, di2, own]  # (B, D)
            de[:b] = -d_own.sum(axis=1)
            d_subs = dlogits[bi2[..., None], di2[..., None], new_vals]  # (B, D, C-1)
            de[b:] = -d_subs.reshape(-1)
            grads: dict[str, np.ndarray] = {}
            self.stack.backward(de[:, None], cache, grads)
            return self.store.flatten_grads(grads)

        return logits, vjp


class MaskedModel(_ModelBase):
    """MLP over the state with one position replaced by a mask token.

    Input vocabulary is C+1 (index C is the mask); time features are
    concatenated to the flattened one-hot input.  Evaluating all conditionals
    needs D passes, one per masked position.
    """

    kind = "masked"

    def __init__(
        self,
        space: StateSpace,
        hidden: tuple = (256, 256, 256),
        mode: str = "noisy_marginal",
        horizon: float = 1.0,
        seed: int = 0,
    ) -> None:
        self._init_common(space, mode, horizon)
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        in_dim = space.dims * (space.vocab + 1) + TIME_FEATURE_DIM
        self.stack = _DenseStack(
            self.store, "mlp/", in_dim, self.hidden, space.vocab, rng, time_inject=False
        )

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "dims": self.space.dims,
            "vocab": self.space.vocab,
            "ordinal": self.space.ordinal,
            "hidden": list(self.hidden),
            "mode": self.mode,
            "horizon": self.horizon,
        }

    def logits_and_vjp(self, xs: np.ndarray, ts):
        xs, ts = self._batch_times(xs, ts)
        b, d = xs.shape
        c = self.space.vocab
        masked = np.repeat(xs[:, None, :], d, axis=1)  # (B, D, D)
        di = np.arange(d)
        masked[:, di, di] = c  # mask token
        rows = masked.reshape(b * d, d)
        eye = np.eye(c + 1)
        flat = eye[rows].reshape(b * d, -1)
        tfeat = np.repeat(time_features(ts, self.horizon), d, axis=0)
        inputs = np.concatenate([flat, tfeat], axis=1)
        out, cache = self.stack.forward(inputs, None)
        logits = out.reshape(b, d, c)

        def vjp(dlogits: np.ndarray) -> np.ndarray:
            grads: dict[str, np.ndarray] = {}
            self.stack.backward(dlogits.reshape(b * d, c), cache, grads)
            return self.store.flatten_grads(grads)

        return logits, vjp


class HollowModel(_ModelBase):
    """Two directional masked-dense streams with a combining readout.

    The forward stream's first layer is strictly causal (position d sees only
    positions before d), the backward stream strictly anti-causal; deeper
    stream layers are inclusive within their own stream.  The readout for
    position d sees both streams at d plus the raw time features, so no path
    connects input d to output d.  One pass yields all D conditionals.
    """

    kind = "hollow"

    def __init__(
        self,
        space: StateSpace,
        stream_width: int = 32,
        n_layers: int = 2,
        mode: str = "noisy_marginal",
        horizon: float = 1.0,
        seed: int = 0,
    ) -> None:
        self._init_common(space, mode, horizon)
        if n_layers < 1:
            raise ConfigError("need at least one stream layer")
        self.stream_width = int(stream_width)
        self.n_layers = int(n_layers)
        rng = np.random.default_rng(seed)
        d, c, h = space.dims, space.vocab, self.stream_width
        f = c + TIME_FEATURE_DIM  # per-token features: one-hot + time
        tri_strict = np.tril(np.ones((d, d)), k=-1)
        tri_incl = np.tril(np.ones((d, d)), k=0)
        self._masks = {}
        for name, first_in in (("fwd", f), ("bwd", f)):
            strict = tri_strict if name == "fwd" else tri_strict.T
            incl = tri_incl if name == "fwd" else tri_incl.T
            for layer in range(self.n_layers):
                in_per = first_in if layer == 0 else h
                mask = np.kron(strict if layer == 0 else incl, np.ones((h, in_per)))
                w = glorot_uniform((d * h, d * in_per), d * in_per, d * h, rng) * mask
                self.store.add(f"{name}{layer}/w", w)
                self.store.add(f"{name}{layer}/b", np.zeros(d * h))
                self._masks[f"{name}{layer}/w"] = mask
        # readout: block-diagonal over the two stream features, dense in time
        blk = np.kron(np.eye(d), np.ones((c, 2 * h)))
        self._masks["out/w"] = blk
        self.store.add("out/w", np.zeros((d * c, d * 2 * h)))
        self.store.add("out/t", np.zeros((d * c, TIME_FEATURE_DIM)))
        self.store.add("out/b", np.zeros(d * c))

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "dims": self.space.dims,
            "vocab": self.space.vocab,
            "ordinal": self.space.ordinal,
            "stream_width": self.stream_width,
            "n_layers": self.n_layers,
            "mode": self.mode,
            "horizon": self.horizon,
        }

    def logits_and_vjp(self, xs: np.ndarray, ts):
        xs, ts = self._batch_times(xs, ts)
        b, d = xs.shape
        c, h = self.space.vocab, self.stream_width
        tfeat = time_features(ts, self.horizon)
        eye = np.eye(c)
        tokens = np.concatenate(
            [eye[xs], np.repeat(tfeat[:, None, :], d, axis=1)], axis=2
        )  # (B, D, C+64)
        flat_in = tokens.reshape(b, -1)

        caches = {}
        streams = {}
        for name in ("fwd", "bwd"):
            hcur = flat_in
            layer_caches = []
            for layer in range(self.n_layers):
                key = f"{name}{layer}/w"
                w = self.store[key] * self._masks[key]
                z = hcur @ w.T + self.store[f"{name}{layer}/b"]
                layer_caches.append((hcur, z))
                hcur = elu(z)
            caches[name] = layer_caches
            streams[name] = hcur  # (B, D*H)

        combined = np.concatenate(
            [streams["fwd"].reshape(b, d, h), streams["bwd"].reshape(b, d, h)], axis=2
        ).reshape(b, d * 2 * h)
        w_out = self.store["out/w"] * self._masks["out/w"]
        logits_flat = combined @ w_out.T + tfeat @ self.store["out/t"].T + self.store["out/b"]
        logits = _check_finite("hollow logits", logits_flat).reshape(b, d, c)

        def vjp(dlogits: np.ndarray) -> np.ndarray:
            grads: dict[str, np.ndarray] = {}
            d_flat = dlogits.reshape(b, d * c)
            grads["out/w"] = (d_flat.T @ combined) * self._masks["out/w"]
            grads["out/t"] = d_flat.T @ tfeat
            grads["out/b"] = d_flat.sum(axis=0)
            d_combined = (d_flat @ w_out).reshape(b, d, 2 * h)
            d_streams = {
                "fwd": d_combined[:, :, :h].reshape(b, d * h),
                "bwd": d_combined[:, :, h:].reshape(b, d * h),
            }
            for name in ("fwd", "bwd"):
                dh = d_streams[name]
                for layer in range(self.n_layers - 1, -1, -1):
                    hin, z = caches[name][layer]
                    dz = dh * elu_grad(z)
                    key = f"{name}{layer}/w"
                    grads[key] = (dz.T @ hin) * self._masks[key]
                    grads[f"{name}{layer}/b"] = dz.sum(axis=0)
                    dh = dz @ (self.store[key] * self._masks[key])
            return self.store.flatten_grads(grads)

        return logits, vjp


class TabularModel(_ModelBase):
    """Trainable conditional table, time-binned over [0, horizon].

    One logit row per (time bin, dimension, context of the other dimensions).
    Exact representation for small spaces up to the within-bin drift of the
    true conditionals.
    """

    kind = "tabular"

    def __init__(
        self,
        space: StateSpace,
        n_time_bins: int = 32,
        mode: str = "noisy_marginal",
        horizon: float = 1.0,
        seed: int = 0,
    ) -> None:
        self._init_common(space, mode, horizon)
        space.require_tabular()
        self.n_time_bins = int(n_time_bins)
        d, c = space.dims, space.vocab
        self.n_contexts = c ** (d - 1)
        self.store.add("table", np.zeros(self.n_time_bins * d * self.n_contexts * c))

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "dims": self.space.dims,
            "vocab": self.space.vocab,
            "ordinal": self.space.ordinal,
            "n_time_bins": self.n_time_bins,
            "mode": self.mode,
            "horizon": self.horizon,
        }

    def time_bin(self, ts: np.ndarray) -> np.ndarray:
        frac = np.clip(np.asarray(ts, dtype=np.float64) / self.horizon, 0.0, 1.0)
        return np.minimum((frac * self.n_time_bins).astype(np.int64), self.n_time_bins - 1)

    def bin_center(self, k: int) -> float:
        return (k + 0.5) * self.horizon / self.n_time_bins

    def context_index(self, xs: np.ndarray) -> np.ndarray:
        """(B, D) array of context codes: digits of all dimensions but d."""
        b, d = xs.shape
        c = self.space.vocab
        ctx = np.zeros((b, d), dtype=np.int64)
        for dd in range(d):
            others = np.delete(np.arange(d), dd)
            weights = c ** np.arange(others.size - 1, -1, -1, dtype=np.int64) if others.size else np.zeros(0, dtype=np.int64)
            ctx[:, dd] = xs[:, others] @ weights if others.size else 0
        return ctx

    def logits_and_vjp(self, xs: np.ndarray, ts):
        xs, ts = self._batch_times(xs, ts)
        b, d = xs.shape
        c = self.space.vocab
        bins = self.time_bin(ts)
        ctx = self.context_index(xs)
        table = self.store["table"].reshape(self.n_time_bins, d, self.n_contexts, c)
        di = np.arange(d)[None, :]
        logits = table[bins[:, None], di, ctx]  # (B, D, C)

        def vjp(dlogits: np.ndarray) -> np.ndarray:
            grad = np.zeros_like(table)
            np.add.at(grad, (bins[:, None], di, ctx), dlogits)
            return self.store.flatten_grads({"table": grad})

        return logits, vjp


class OrdinalScoreModel(_ModelBase):
    """Per-dimension scalar regressor for ordinal log-ratio targets.

    Sees the whole state as scaled numeric inputs; leak-freedom intentionally
    does not apply (the score is a function of the state itself).
    """

    kind = "ordinal_score"

    def __init__(
        self,
        space: StateSpace,
        hidden: tuple = (128, 128),
        horizon: float = 1.0,
        seed: int = 0,
    ) -> None:
        if not space.ordinal:
            raise ConfigError("ordinal score model requires an ordinal space")
        self._init_common(space, "noisy_marginal", horizon)
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        in_dim = space.dims + TIME_FEATURE_DIM
        self.stack = _DenseStack(
            self.store, "mlp/", in_dim, self.hidden, space.dims, rng, time_inject=False
        )

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "dims": self.space.dims,
            "vocab": self.space.vocab,
            "ordinal": self.space.ordinal,
            "hidden": list(self.hidden),
            "mode": self.mode,
            "horizon": self.horizon,
        }

    def _features(self, xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
        scale = (self.space.vocab - 1) / 2.0
        scaled = (xs - scale) / scale
        return np.concatenate([scaled, time_features(ts, self.horizon)], axis=1)

    def scores_and_vjp(self, xs: np.ndarray, ts):
        xs, ts = self._batch_times(xs, ts)
        out, cache = self.stack.forward(self._features(xs, ts), None)

        def vjp(dscores: np.ndarray) -> np.ndarray:
            grads: dict[str, np.ndarray] = {}
            self.stack.backward(dscores, cache, grads)
            return self.store.flatten_grads(grads)

        return out, vjp

    def scores(self, xs: np.ndarray, ts) -> np.ndarray:
        out, _ = self.scores_and_vjp(xs, ts)
        return out

    def logits_and_vjp(self, xs, ts):
        raise ConfigError("ordinal score model does not produce conditional logits")
