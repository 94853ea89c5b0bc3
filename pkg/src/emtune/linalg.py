"""Dense float64 primitives with hand-written backward passes.

Everything in here is deterministic: identical inputs produce bit-identical
outputs, and the reductions we own run in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

__all__ = [
    "as_matrix",
    "matmul",
    "affine_forward",
    "affine_backward",
    "relu_forward",
    "relu_backward",
    "AdamState",
    "init_adam_state",
    "adam_update",
    "grad_check",
]


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array; any other rank is rejected."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def affine_forward(x, w, bias) -> np.ndarray:
    """x @ w + bias with the bias broadcast over rows."""
    x = as_matrix(x, "x")
    w = as_matrix(w, "w")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.ndim != 1:
        raise DimensionError(f"bias must be 1-D, got shape {bias.shape}")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine: input width {x.shape[1]} does not chain into weight {w.shape}")
    if bias.shape[0] != w.shape[1]:
        raise DimensionError(f"affine: bias length {bias.shape[0]} != weight columns {w.shape[1]}")
    return x @ w + bias


def affine_backward(x, w, upstream):
    """Gradients of affine_forward; returns (d_input, d_weight, d_bias)."""
    x = as_matrix(x, "x")
    w = as_matrix(w, "w")
    upstream = as_matrix(upstream, "upstream")
    if upstream.shape != (x.shape[0], w.shape[1]):
        raise DimensionError(
            f"affine backward: upstream {upstream.shape} does not match output ({x.shape[0]}, {w.shape[1]})"
        )
    d_input = upstream @ w.T
    d_weight = x.T @ upstream
    d_bias = upstream.sum(axis=0)
    return d_input, d_weight, d_bias


def relu_forward(x) -> np.ndarray:
    return np.maximum(as_matrix(x, "x"), 0.0)


def relu_backward(x, upstream) -> np.ndarray:
    """Upstream masked by x > 0. The subgradient at exactly 0 is 0."""
    x = as_matrix(x, "x")
    upstream = as_matrix(upstream, "upstream")
    if x.shape != upstream.shape:
        raise DimensionError(f"relu backward: upstream {upstream.shape} != input {x.shape}")
    return upstream * (x > 0.0)


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step count."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam_state(params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Fresh state with zero moments, shape-congruent with params."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError(f"adam betas must lie in [0, 1), got {beta1}, {beta2}")
    if eps <= 0.0:
        raise ConfigError(f"adam eps must be positive, got {eps}")
    zeros = lambda: [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
    return AdamState(zeros(), zeros(), 0, beta1, beta2, eps)


def adam_update(params, grads, state: AdamState, learning_rate: float):
    """One bias-corrected Adam step.

    Returns (new_params, new_state); the inputs are left untouched so a
    caller can keep the trajectory. Non-finite gradient entries abort the
    step before any parameter is changed.
    """
    if learning_rate < 0.0:
        raise ConfigError(f"learning rate must be >= 0, got {learning_rate}")
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise DimensionError(
            f"adam: got {len(params)} params, {len(grads)} grads, {len(state.first_moment)} moment slots"
        )
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam: shapes diverge, param {p.shape}, grad {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("adam: non-finite gradient entry, aborting the update step")

    t = state.step_count + 1
    corr1 = 1.0 - state.beta1 ** t
    corr2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m_next = state.beta1 * m + (1.0 - state.beta1) * g
        v_next = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m_next / corr1
        v_hat = v_next / corr2
        new_params.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m_next)
        new_v.append(v_next)
    return new_params, AdamState(new_m, new_v, t, state.beta1, state.beta2, state.eps)


def grad_check(fn, params, perturbation: float = 1e-6) -> float:
    """Compare analytic gradients against central differences.

    fn(params) must return (scalar value, gradient list congruent with
    params). Every coordinate is perturbed in place and restored, and the
    worst relative error |a - n| / max(1e-12, |a| + |n|) over all
    coordinates is returned.
    """
    if perturbation <= 0.0:
        raise ConfigError(f"perturbation must be positive, got {perturbation}")
    value, analytic = fn(params)
    if not np.isfinite(value):
        raise NumericError(f"grad_check: function value is not finite ({value})")
    if len(analytic) != len(params):
        raise DimensionError(f"grad_check: {len(analytic)} gradients for {len(params)} params")

    worst = 0.0
    for k, p in enumerate(params):
        if analytic[k].shape != p.shape:
            raise DimensionError(f"grad_check: gradient {k} shape {analytic[k].shape} != param {p.shape}")
        for idx in np.ndindex(p.shape):
            original = p[idx]
            p[idx] = original + perturbation
            f_plus = fn(params)[0]
            p[idx] = original - perturbation
            f_minus = fn(params)[0]
            p[idx] = original
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("grad_check: non-finite value at a perturbed point")
            numeric = (f_plus - f_minus) / (2.0 * perturbation)
            a = float(analytic[k][idx])
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst
