"""Finite-difference verification of every analytic gradient.

Each check draws seeded random instances, evaluates the analytic gradients,
and compares them against central differences via linalg.grad_check. Hinge
losses resample any draw that lands within 1e-3 of the kink so the checks
stay away from the non-differentiable boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .linalg import grad_check
from .losses import barlow_twins_loss, combined_loss, cross_entropy_loss, triplet_loss
from .model import (
    AdapterConfig,
    EncoderConfig,
    init_adapter,
    init_encoder,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
)

DEFAULT_TOLERANCE = 1e-4

__all__ = ["DEFAULT_TOLERANCE", "GradCheckResult", "run_gradient_suite"]


@dataclass
class GradCheckResult:
    name: str
    max_error: float

    def ok(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_error < tolerance


def _hinge_safe_triplet(rng, batch, dim, margin, attempts: int = 100):
    """Draw (anchor, positive, negative) with every row clear of the hinge."""
    for _ in range(attempts):
        anchor = rng.standard_normal((batch, dim))
        positive = rng.standard_normal((batch, dim))
        negative = rng.standard_normal((batch, dim))
        out = triplet_loss(anchor, positive, negative, margin)
        slack = out.pos_distances - out.neg_distances + margin
        if np.all(np.abs(slack) > 1e-3):
            return anchor, positive, negative
    raise NumericError("could not sample a triplet batch away from the hinge boundary")


def _check_triplet(rng, margin=1.0, batch=6, dim=8):
    anchor, positive, negative = _hinge_safe_triplet(rng, batch, dim, margin)

    def fn(params):
        out = triplet_loss(params[0], params[1], params[2], margin)
        return out.loss, [out.grad_anchor, out.grad_positive, out.grad_negative]

    return grad_check(fn, [anchor, positive, negative])


def _check_barlow(rng, center, lambd=0.005, batch=6, dim=5):
    anchor = rng.standard_normal((batch, dim))
    positive = rng.standard_normal((batch, dim))

    def fn(params):
        out = barlow_twins_loss(params[0], params[1], lambd, center)
        return out.loss, [out.grad_anchor, out.grad_positive]

    return grad_check(fn, [anchor, positive])


def _check_combined(rng, margin=1.0, lambd=0.005, beta=0.01, batch=6, dim=5):
    anchor, positive, negative = _hinge_safe_triplet(rng, batch, dim, margin)

    def fn(params):
        out = combined_loss(params[0], params[1], params[2], margin, lambd, beta)
        return out.loss, [out.grad_anchor, out.grad_positive, out.grad_negative]

    return grad_check(fn, [anchor, positive, negative])


def _check_cross_entropy(rng, batch=8, classes=5):
    logits = rng.standard_normal((batch, classes))
    labels = rng.integers(0, classes, size=batch)

    def fn(params):
        out = cross_entropy_loss(params[0], labels)
        return out.loss, [out.grad_logits]

    return grad_check(fn, [logits])


def _jitter_biases(params, rng, scale: float = 0.2):
    """Zero-init biases put ReLU kinks exactly at 0; move off them."""
    return [p.copy() if p.ndim == 2 else p + rng.normal(0.0, scale, p.shape) for p in params]


def _relu_clearance(params, x) -> float:
    """Smallest |preactivation| over the stack's ReLU layers."""
    layers = len(params) // 2
    h = x
    clearance = np.inf
    for i in range(layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        if i < layers - 1:
            clearance = min(clearance, float(np.abs(z).min()))
            h = np.maximum(z, 0.0)
        else:
            h = z
    return clearance


def _encoder_loss_fn(inputs, margin, lambd, beta):
    """Combined loss composed with a shared encoder, w.r.t. encoder params."""
    x_anchor, x_positive, x_negative = inputs

    def fn(params):
        emb_a, cache_a = mlp_forward_cached(params, x_anchor)
        emb_p, cache_p = mlp_forward_cached(params, x_positive)
        emb_n, cache_n = mlp_forward_cached(params, x_negative)
        out = combined_loss(emb_a, emb_p, emb_n, margin, lambd, beta)
        grads = [np.zeros_like(p) for p in params]
        for cache, upstream in (
            (cache_a, out.grad_anchor),
            (cache_p, out.grad_positive),
            (cache_n, out.grad_negative),
        ):
            role_grads, _ = mlp_backward(params, cache, upstream)
            for acc, g in zip(grads, role_grads):
                acc += g
        return out.loss, grads

    return fn


def _check_encoder_combined(rng, point: int, margin=1.0, lambd=0.005, beta=0.01, attempts: int = 100):
    # The 8 x 4 -> 3 -> 2 shape is small enough for exhaustive differencing.
    config = EncoderConfig(input_dim=4, hidden_dims=(3,), bottleneck_dim=2, seed=1000 + point)
    params = _jitter_biases(init_encoder(config), rng)
    for _ in range(attempts):
        inputs = tuple(rng.standard_normal((8, 4)) for _ in range(3))
        if min(_relu_clearance(params, x) for x in inputs) <= 1e-3:
            continue
        embeddings = [mlp_forward(params, x) for x in inputs]
        out = triplet_loss(*embeddings, margin)
        slack = out.pos_distances - out.neg_distances + margin
        if np.all(np.abs(slack) > 1e-3):
            return grad_check(_encoder_loss_fn(inputs, margin, lambd, beta), params)
    raise NumericError("could not sample an encoder grad-check point clear of kinks")


def _check_end2end(rng, point: int, classes=3, attempts: int = 100):
    encoder_config = EncoderConfig(input_dim=4, hidden_dims=(3,), bottleneck_dim=2, seed=2000 + point)
    adapter_config = AdapterConfig(input_dim=2, num_classes=classes, hidden_dim=3, seed=3000 + point)
    enc = _jitter_biases(init_encoder(encoder_config), rng)
    adp = _jitter_biases(init_adapter(adapter_config), rng)
    n_enc = len(enc)
    for _ in range(attempts):
        x = rng.standard_normal((8, 4))
        if min(_relu_clearance(enc, x), _relu_clearance(adp, mlp_forward(enc, x))) > 1e-3:
            break
    else:
        raise NumericError("could not sample an end-to-end grad-check point clear of ReLU kinks")
    labels = rng.integers(0, classes, size=8)

    def fn(params):
        emb, cache_enc = mlp_forward_cached(params[:n_enc], x)
        logits, cache_adp = mlp_forward_cached(params[n_enc:], emb)
        out = cross_entropy_loss(logits, labels)
        grads_adp, grad_emb = mlp_backward(params[n_enc:], cache_adp, out.grad_logits)
        grads_enc, _ = mlp_backward(params[:n_enc], cache_enc, grad_emb)
        return out.loss, grads_enc + grads_adp

    return grad_check(fn, enc + adp)


def run_gradient_suite(seed: int = 2024, points: int = 10) -> list:
    """Run every gradient check at `points` seeded draws each.

    Returns one GradCheckResult per check, carrying the worst relative
    error seen across the draws.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    checks = [
        ("triplet", lambda i: _check_triplet(rng)),
        ("barlow_twins", lambda i: _check_barlow(rng, center=False)),
        ("barlow_twins_centered", lambda i: _check_barlow(rng, center=True)),
        ("combined", lambda i: _check_combined(rng)),
        ("cross_entropy", lambda i: _check_cross_entropy(rng)),
        ("encoder_combined", lambda i: _check_encoder_combined(rng, i)),
        ("encoder_adapter_cross_entropy", lambda i: _check_end2end(rng, i)),
    ]
    results = []
    for name, runner in checks:
        worst = 0.0
        for i in range(points):
            worst = max(worst, runner(i))
        results.append(GradCheckResult(name, worst))
    return results
