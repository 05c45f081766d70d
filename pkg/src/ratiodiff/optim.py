"""Flat-vector Adam optimizer.

Everything trainable in this package lives in a single float64
parameter vector, so the optimizer is a pure function on flat arrays
plus a small moment-accumulator state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ConfigError("learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must sit in [0, 1)")
        if self.eps <= 0.0:
            raise ConfigError("eps must be positive")


# Preset matching the image-scale recipe: no first moment, fast
# second-moment decay.
PRESETS = {
    "default": AdamConfig(),
    "cifar": AdamConfig(lr=1e-4, beta1=0.0, beta2=0.99),
}


def adam_preset(name: str, lr: float = None) -> AdamConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown optimizer preset {name!r}")
    base = PRESETS[name]
    if lr is None:
        return base
    return AdamConfig(lr=lr, beta1=base.beta1, beta2=base.beta2, eps=base.eps)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), step=0)


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, config: AdamConfig
) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new params.

    With a constant gradient g and zero state the first update moves
    every coordinate by exactly lr * sign(g), because both
    bias-corrected moments equal g and g^2 on step one.
    """
    if params.shape != grads.shape:
        raise ConfigError("parameter and gradient shapes differ")
    state.step += 1
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * grads * grads
    m_hat = state.m / (1.0 - config.beta1 ** state.step)
    v_hat = state.v / (1.0 - config.beta2 ** state.step)
    return params - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
