"""Kullback-Leibler divergences for Bernoulli rewards and categorical kernels."""

from __future__ import annotations

import math

import numpy as np


def bernoulli_kl(p, q):
    """kl(p, q) between Bernoulli laws, with 0 log 0 = 0 and +inf off the support.

    Boundary conventions: kl(0, q) = -log(1 - q) and kl(1, q) = -log(q).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / q), 0.0)
        b = np.where(p < 1, (1 - p) * np.log(np.where(p < 1, 1 - p, 1.0) / (1 - q)), 0.0)
    out = a + b
    out = np.where(np.isnan(out), np.inf, out)
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def bernoulli_kl_scalar(p: float, q: float) -> float:
    """Scalar ``bernoulli_kl`` without array overhead, same conventions."""
    out = 0.0
    if p > 0:
        if q <= 0:
            return math.inf
        out += p * math.log(p / q)
    if p < 1:
        if q >= 1:
            return math.inf
        out += (1 - p) * math.log((1 - p) / (1 - q))
    return max(out, 0.0)


def categorical_kl(p, q, axis=-1):
    """KL(p || q) along ``axis``; +inf when p is not absolutely continuous w.r.t. q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / q), 0.0)
    out = np.maximum(terms.sum(axis=axis), 0.0)
    return out if np.ndim(out) else float(out)


def pair_kl(model, alt) -> np.ndarray:
    """Per-pair KL(M(p) || M'(p)) = kl(r, r') + KL(k || k')."""
    return bernoulli_kl(model.reward, alt.reward) + categorical_kl(model.kernel, alt.kernel)


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())
