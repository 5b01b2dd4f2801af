"""Glorot-uniform initialisation and AdaDelta with coupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError
from .tensor import Var


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    if fan_in < 1 or fan_out < 1:
        raise ConfigError("fan", f"fan_in and fan_out must be >= 1, got ({fan_in}, {fan_out})")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform(fan_in: int, fan_out: int, seed, shape=None, dtype=np.float64) -> np.ndarray:
    """Draw U(-g, g) with g = sqrt(6 / (fan_in + fan_out)).

    For a convolution pass ``fan_in = in_ch * kernel`` and
    ``fan_out = out_ch * kernel``. ``seed`` is an int or a Generator.
    """
    g = glorot_bound(fan_in, fan_out)
    if shape is None:
        shape = (fan_out, fan_in)
    return _rng(seed).uniform(-g, g, size=shape).astype(dtype)


def conv_fans(weight_shape) -> tuple[int, int]:
    """Fans for a weight laid out (a, b, kernel) or (out, in)."""
    if len(weight_shape) == 3:
        a, b, k = weight_shape
        return b * k, a * k
    out, inp = weight_shape
    return inp, out


@dataclass
class AdaDeltaState:
    acc_grad_sq: np.ndarray
    acc_update_sq: np.ndarray
    rho: float = 0.95
    eps: float = 1e-6
    weight_decay: float = 0.0

    @classmethod
    def zeros_like(cls, param, rho=0.95, eps=1e-6, weight_decay=0.0) -> "AdaDeltaState":
        values = param.values if isinstance(param, Var) else np.asarray(param)
        if not 0.0 < rho < 1.0:
            raise ConfigError("rho", f"must lie in (0, 1), got {rho}")
        if eps <= 0:
            raise ConfigError("eps", f"must be positive, got {eps}")
        if weight_decay < 0:
            raise ConfigError("weight_decay", f"must be nonnegative, got {weight_decay}")
        return cls(np.zeros_like(values), np.zeros_like(values), rho, eps, weight_decay)


def adadelta_step(param: np.ndarray, grad: np.ndarray, state: AdaDeltaState, name: str = "param"):
    """One AdaDelta update; ``param`` and ``state`` are modified in place.

    The gradient is augmented with ``weight_decay * param`` before the
    accumulators are touched. Returns ``(param, state)``.
    """
    if grad.shape != param.shape or state.acc_grad_sq.shape != param.shape:
        raise ConfigError(name, f"shape mismatch: param {param.shape}, grad {grad.shape}, "
                                f"state {state.acc_grad_sq.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(name, "non-finite gradient")
    rho, eps = state.rho, state.eps
    g = grad + state.weight_decay * param if state.weight_decay else grad
    state.acc_grad_sq *= rho
    state.acc_grad_sq += (1.0 - rho) * g * g
    delta = -np.sqrt(state.acc_update_sq + eps) / np.sqrt(state.acc_grad_sq + eps) * g
    state.acc_update_sq *= rho
    state.acc_update_sq += (1.0 - rho) * delta * delta
    param += delta
    return param, state


@dataclass
class AdaDelta:
    """AdaDelta over a named set of parameters."""

    params: dict
    rho: float = 0.95
    eps: float = 1e-6
    weight_decay: float = 5e-4
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.states:
                self.states[name] = AdaDeltaState.zeros_like(p, self.rho, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.values)
            adadelta_step(p.values, grad, self.states[name], name)
