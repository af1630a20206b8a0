"""Weighted KL projection of a model onto its set of confusing alternatives.

An alternative M' agrees with M on a protected set of pairs, dominates M
(M << M') and reaches gain at least g*(M). The search runs over recurrent
classes R of deterministic policies: on each class the rewards of the free
pairs are raised as cheaply as possible (exact Lagrangian solve), and when
some free pair of R has an unknown kernel, a mirror-descent pass over those
kernel rows tries to do better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .chains import recurrent_classes, stationary
from .errors import InvalidWeights
from .kl import bernoulli_kl, bernoulli_kl_scalar, categorical_kl
from .model import ENUM_CAP, MdpModel

R_LO = 1e-9
R_HI = 1.0 - 1e-9
MD_STEPS = 500
MD_STEP = 0.1
MD_MIX = 1e-2
MD_MIN_STEP = 1e-7
MD_MAX_STEP = 4.0
MD_GROW = 1.5
MD_SHRINK = 0.5


@dataclass(frozen=True)
class CandidateClass:
    states: np.ndarray
    pairs: np.ndarray  # one pair per state, aligned with ``states``


@dataclass(frozen=True)
class ConfusingCandidate:
    model: MdpModel | None
    target_class: np.ndarray
    achieved_gain: float
    kl_per_pair: np.ndarray
    value: float
    kernel_refined: bool = False


@lru_cache(maxsize=256)
def _classes_for_support(offsets: bytes, support: bytes, n_states: int, cap: int) -> tuple:
    offs = np.frombuffer(offsets, dtype=np.int64)
    supp = np.frombuffer(support, dtype=bool).reshape(-1, n_states)
    pattern = supp.astype(float)
    ranges = [range(int(offs[s]), int(offs[s + 1])) for s in range(n_states)]
    n_pol = int(np.prod([len(r) for r in ranges], dtype=object))
    if n_pol > cap:
        from .errors import ResourceLimit

        raise ResourceLimit(f"{n_pol} deterministic policies exceed the cap {cap}")
    import itertools

    seen = {}
    for choice in itertools.product(*ranges):
        choice = np.array(choice)
        for cls in recurrent_classes(pattern[choice]):
            key = tuple(choice[cls].tolist())
            if key not in seen:
                seen[key] = CandidateClass(cls, choice[cls])
    return tuple(sorted(seen.values(), key=lambda c: tuple(c.pairs.tolist())))


def candidate_classes(model: MdpModel, cap: int = ENUM_CAP) -> tuple:
    """Distinct recurrent classes of deterministic policies (depends on supports only)."""
    return _classes_for_support(
        model.offsets.tobytes(), np.ascontiguousarray(model.kernel > 0).tobytes(), model.n_states, cap
    )


def _raise_rewards(w, r, nu, g_target, hi=R_HI):
    """min sum w kl(r, x) s.t. nu . x >= g_target with x >= r, over free entries.

    Returns (value, x) or (inf, None) when the target is out of reach.
    """
    x = r.copy()
    can = r < hi
    if float(nu @ r) >= g_target:
        return 0.0, x
    top = np.where(can, hi, r)
    if float(nu @ top) < g_target:
        return np.inf, None
    zero_w = can & (w <= 0)
    if zero_w.any():
        x0 = np.where(zero_w, hi, r)
        if float(nu @ x0) >= g_target:
            # zero-cost raise: lift the weightless pairs only as far as needed
            need = g_target - float(nu @ r)
            room = nu[zero_w] * (hi - r[zero_w])
            frac = need / room.sum()
            x[zero_w] = r[zero_w] + frac * (hi - r[zero_w])
            return 0.0, x
    active = can & (w > 0)
    nu_a, w_a, r_a = nu[active], w[active], r[active]
    base = float(nu @ np.where(zero_w, hi, np.where(active, 0.0, r)))
    need = g_target - base

    terms = list(zip(nu_a.tolist(), w_a.tolist(), r_a.tolist()))

    def x_one(lam, nu_p, w_p, r_p):
        # root in [r, 1) of lam nu x^2 + (w - lam nu) x - w r = 0, written stably
        a = lam * nu_p
        if a <= 0:
            return r_p
        b = w_p - a
        disc = math.sqrt(b * b + 4.0 * a * w_p * r_p)
        x = 2.0 * w_p * r_p / (b + disc) if b > 0 else (disc - b) / (2.0 * a)
        return min(max(x, r_p), hi)

    def x_of(lam):
        return np.array([x_one(lam, *t) for t in terms])

    if active.sum() == 1:
        xa = np.array([min(max(need / nu_a[0], r_a[0]), hi)])
    else:

        def f(lam):
            return sum(t[0] * x_one(lam, *t) for t in terms) - need

        lo_l, hi_l = 0.0, 1.0
        while f(hi_l) < 0:
            lo_l, hi_l = hi_l, hi_l * 4.0
            if hi_l > 1e300:
                break
        lam = brentq(f, lo_l, hi_l, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        xa = x_of(lam)
        short = need - float(nu_a @ xa)
        if short > 0:
            # close the last rounding gap on the pair with the most headroom
            room = nu_a * (hi - xa)
            j = int(np.argmax(room))
            xa[j] = min(hi, xa[j] + short / nu_a[j] * (1 + 1e-12))
    x[active] = xa
    x[zero_w] = np.where(zero_w, hi, x)[zero_w]
    value = sum(wi * bernoulli_kl_scalar(ri, xi) for wi, ri, xi in zip(w.tolist(), r.tolist(), x.tolist()) if wi > 0)
    return float(value), x


@lru_cache(maxsize=4096)
def _stationary_cached(p_bytes: bytes, n: int) -> np.ndarray:
    nu = stationary(np.frombuffer(p_bytes).reshape(n, n))
    nu.setflags(write=False)
    return nu


def _class_solution(model, cls, w, free, g_target, kernel=None):
    """Rewards-only solve on one class; optionally under a modified kernel."""
    k = model.kernel if kernel is None else kernel
    pairs, states = cls.pairs, cls.states
    p_class = k[np.ix_(pairs, states)]
    nu = _stationary_cached(p_class.tobytes(), len(states))
    r = model.reward[pairs]
    wf = np.where(free[pairs], w[pairs], 0.0)
    # protected pairs keep their reward: treat them as already at the cap
    r_use = r.copy()
    value, x = _raise_rewards_masked(wf, r_use, nu, g_target, free[pairs])
    return value, x, nu


def _raise_rewards_masked(w, r, nu, g_target, free):
    if free.all():
        return _raise_rewards(w, r, nu, g_target)
    fixed_gain = float(nu[~free] @ r[~free])
    value, xf = _raise_rewards(w[free], r[free], nu[free], g_target - fixed_gain)
    if xf is None:
        return value, None
    x = r.copy()
    x[free] = xf
    return value, x


def _refine_kernel(model, cls, w, free, g_target, base_value, steps=MD_STEPS):
    """Exponentiated-gradient search over the unknown kernel rows of a class."""
    pairs, states = cls.pairs, cls.states
    rows = [i for i, p in enumerate(pairs) if free[p] and not model.known[p]]
    if not rows:
        return None
    k_cls = model.kernel[np.ix_(pairs, states)].copy()
    k_true = k_cls.copy()
    uniform = np.full(len(states), 1.0 / len(states))
    for i in rows:
        k_cls[i] = (1 - MD_MIX) * k_cls[i] + MD_MIX * uniform
    r = model.reward[pairs]
    wf = np.where(free[pairs], w[pairs], 0.0)
    fr = free[pairs]
    scale = max(float(wf.sum()), 1e-300)

    def evaluate(kc):
        nu = stationary(kc)
        val, x = _raise_rewards_masked(wf, r, nu, g_target, fr)
        if x is None:
            return np.inf, None, nu
        val += float(sum(wf[i] * categorical_kl(k_true[i], kc[i]) for i in rows))
        return val, x, nu

    def gradient(kc, x, nu):
        grad = np.zeros_like(kc)
        if x is None:
            # target out of reach under this kernel: climb the best reachable gain first
            h = _class_bias(kc, nu, top)
            for i in rows:
                grad[i] = -nu[i] * h
        else:
            # Lagrange multiplier from the stationarity of any active pair
            lam = _multiplier(wf, r, x, nu)
            h = _class_bias(kc, nu, x)
            for i in rows:
                ratio = np.divide(k_true[i], kc[i], out=np.zeros_like(h), where=k_true[i] > 0)
                grad[i] = -lam * nu[i] * h - wf[i] * ratio
        grad /= scale
        return grad / (np.max(np.abs(grad[rows])) or 1.0)

    def move(kc, grad, step):
        nxt = kc.copy()
        for i in rows:
            z = nxt[i] * np.exp(-step * (grad[i] - grad[i].max()))
            nxt[i] = z / z.sum()
        return nxt

    top = np.where(fr, R_HI, r)
    cur = k_cls
    val, x, nu = evaluate(cur)
    # feasibility phase: plain ascent of the reachable gain
    t = 0
    while x is None and t < steps:
        t += 1
        cur = move(cur, gradient(cur, None, nu), MD_STEP / np.sqrt(t))
        val, x, nu = evaluate(cur)
    if x is None:
        return None
    # descent phase: accept only improvements, adapt the step
    step = MD_STEP
    grad = gradient(cur, x, nu)
    while t < steps and step > MD_MIN_STEP:
        t += 1
        cand = move(cur, grad, step)
        v2, x2, nu2 = evaluate(cand)
        if v2 < val:
            cur, val, x, nu = cand, v2, x2, nu2
            grad = gradient(cur, x, nu)
            step = min(step * MD_GROW, MD_MAX_STEP)
        else:
            step *= MD_SHRINK
    best_val, best_x, best_k = val, x, cur
    if best_val < base_value * (1 - 1e-12) - 1e-15:
        return best_val, best_x, best_k
    return None


def _class_bias(p, nu, x):
    """Bias of an irreducible chain from its stationary law: (I - P + 1 nu)^-1 (x - g)."""
    n = p.shape[0]
    return np.linalg.solve(np.eye(n) - p + np.outer(np.ones(n), nu), x - float(nu @ x))


def _multiplier(w, r, x, nu):
    moved = (x > r + 1e-12) & (w > 0) & (nu > 0)
    if not moved.any():
        return 0.0
    i = int(np.flatnonzero(moved)[0])
    return float(w[i] * (x[i] - r[i]) / (x[i] * (1 - x[i])) / nu[i])


def _build_alternative(model, cls, x, k_cls=None):
    reward = model.reward.copy()
    reward[cls.pairs] = x
    kernel = model.kernel
    if k_cls is not None:
        kernel = model.kernel.copy()
        full = np.zeros((len(cls.pairs), model.n_states))
        full[:, cls.states] = k_cls
        kernel[cls.pairs] = full
    return model.replace(reward=np.clip(reward, 0.0, 1.0), kernel=kernel, name=f"{model.name}_alt")


def confusing_weighted_kl_min(
    weights,
    model: MdpModel,
    protected,
    opt_gain: float,
    classes=None,
    build_model: bool = True,
    refine_kernels: bool = True,
    value_only: bool = False,
    stop_below: float | None = None,
):
    """Minimal weighted KL from ``model`` to a confusing alternative.

    Returns (value, best ConfusingCandidate) or (inf, None) when no class can
    be pushed to the optimal gain. With ``value_only`` the candidate is not
    assembled and (value, None) is returned. With ``stop_below`` the search
    stops at the first class whose value is at most that level, so the
    returned value is only guaranteed to be <= stop_below in that case.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (model.n_pairs,):
        raise InvalidWeights("one weight per pair is required")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidWeights("weights must be finite and nonnegative")
    free = np.ones(model.n_pairs, dtype=bool)
    free[np.asarray(protected, dtype=np.int64)] = False
    if classes is None:
        classes = candidate_classes(model)
    best = (np.inf, None, None, None, False)
    # rewards-only values first: they are cheap and may already settle a threshold query
    todo = []
    for cls in classes:
        if not free[cls.pairs].any():
            continue
        value, x, _ = _class_solution(model, cls, w, free, opt_gain)
        if x is not None and value < best[0]:
            best = (value, cls, x, None, False)
        if refine_kernels and not model.known[cls.pairs[free[cls.pairs]]].all():
            todo.append((value, cls))
    if stop_below is not None and best[0] <= stop_below:
        todo = []
    for value, cls in sorted(todo, key=lambda v: v[0]):
        out = _refine_kernel(model, cls, w, free, opt_gain, value)
        if out is not None and out[0] < best[0]:
            best = (out[0], cls, out[1], out[2], True)
            if stop_below is not None and best[0] <= stop_below:
                break
    value, cls, x, k_cls, refined = best
    if cls is None or value_only:
        return float(value), None
    kl = np.zeros(model.n_pairs)
    kl[cls.pairs] = bernoulli_kl(model.reward[cls.pairs], x)
    if k_cls is not None:
        kl[cls.pairs] += categorical_kl(model.kernel[np.ix_(cls.pairs, cls.states)], k_cls)
    gain_kernel = model.kernel[np.ix_(cls.pairs, cls.states)] if k_cls is None else k_cls
    achieved = float(_stationary_cached(np.ascontiguousarray(gain_kernel).tobytes(), len(cls.states)) @ x)
    alt = _build_alternative(model, cls, x, k_cls) if build_model else None
    return float(value), ConfusingCandidate(alt, cls.pairs, achieved, kl, float(value), refined)
