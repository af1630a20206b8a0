"""Policy evaluation and exact average-reward optimal control.

Optimal control uses multichain policy iteration with a lexicographic
improvement step on (k.g, r + k.h, k.w), where w is the bias of the reward
-h. Its fixed points are bias-optimal, so the returned h* is the largest bias
among gain-optimal policies and the Bellman gaps are defined relative to it.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .chains import TOL_SOLVE, poisson_residual, recurrent_classes, scc, solve_chain
from .errors import NotCommunicating, SolverError
from .model import ENUM_CAP, MdpModel, Policy

TOL_GAP = 1e-8
LEX_TOL = 1e-10
MAX_PI_ITER = 10000


@dataclass(frozen=True)
class GainBiasSolution:
    gain: np.ndarray
    bias: np.ndarray
    gaps: np.ndarray
    recurrent_classes: list  # pair index arrays
    class_stationary: list  # per-pair probability vectors
    residual: float


def evaluate_policy(policy: Policy, model: MdpModel) -> GainBiasSolution:
    """Gain, bias and per-pair gaps of a stationary policy."""
    policy.check(model)
    p, r = policy.chain(model)
    sol = solve_chain(p, r)
    residual = poisson_residual(p, r, sol)
    if residual > TOL_SOLVE:
        raise SolverError(f"Poisson residual {residual:.3e} above tolerance")
    ps = model.pair_state
    gaps = sol.gain[ps] + sol.bias[ps] - model.reward - model.kernel @ sol.bias
    pair_classes, pair_stats = [], []
    for c, nu in zip(sol.classes, sol.stationaries):
        in_class = np.isin(ps, c) & (policy.probs > 0)
        pair_classes.append(np.flatnonzero(in_class))
        pair_stats.append(np.where(in_class, nu[ps] * policy.probs, 0.0))
    return GainBiasSolution(sol.gain, sol.bias, gaps, pair_classes, pair_stats, residual)


# --------------------------------------------------------------------------- optimal control


def _greedy_choice(model: MdpModel) -> np.ndarray:
    return np.array(
        [model.offsets[s] + int(np.argmax(model.reward[model.pairs_of(s)])) for s in range(model.n_states)],
        dtype=np.int64,
    )


# Chains met at least twice get their evaluation cached as linear maps of the
# reward: learners re-solve the same kernel with slowly changing rewards.
_SEEN: OrderedDict = OrderedDict()
_OPERATORS: OrderedDict = OrderedDict()
_CACHE_SIZE = 4096
_LOCK = threading.Lock()


def _remember(store: OrderedDict, key, value):
    with _LOCK:
        store[key] = value
        if len(store) > _CACHE_SIZE:
            store.popitem(last=False)


def _chain_operators(p: np.ndarray):
    """(template solution, gain map, bias map) for the chain p, or None on first sight."""
    key = (p.shape[0], p.tobytes())
    ops = _OPERATORS.get(key)
    if ops is not None:
        return ops
    if key not in _SEEN:
        _remember(_SEEN, key, True)
        return None
    n = p.shape[0]
    classes = recurrent_classes(p)
    cols = [solve_chain(p, e, classes) for e in np.eye(n)]
    ops = (cols[0], np.column_stack([c.gain for c in cols]), np.column_stack([c.bias for c in cols]))
    _remember(_OPERATORS, key, ops)
    return ops


def copy_with(obj, **changes):
    """``dataclasses.replace`` without re-running ``__init__``; for hot paths."""
    out = object.__new__(type(obj))
    out.__dict__.update(obj.__dict__)
    out.__dict__.update(changes)
    return out


def _evaluate_choice(model: MdpModel, choice: np.ndarray):
    p = model.kernel[choice]
    r = model.reward[choice]
    ops = _chain_operators(p)
    if ops is None:
        sol = solve_chain(p, r)
        w = solve_chain(p, -sol.bias, sol.classes).bias
        return sol, w
    template, gain_map, bias_map = ops
    bias = bias_map @ r
    sol = copy_with(template, gain=gain_map @ r, bias=bias)
    return sol, -(bias_map @ bias)


def bias_optimal_policy(model: MdpModel, start=None, tol: float = LEX_TOL):
    """Deterministic bias-optimal policy by lexicographic policy iteration.

    Returns (choice, chain solution, second-order bias w). Ties keep the
    incumbent action and otherwise go to the lowest pair index.
    """
    choice = _greedy_choice(model) if start is None else np.array(start, dtype=np.int64)
    offsets = model.offsets.tolist()
    kernel = model.kernel
    for _ in range(MAX_PI_ITER):
        sol, w = _evaluate_choice(model, choice)
        levels = (kernel @ sol.gain, model.reward + kernel @ sol.bias, kernel @ w)
        levels = [lv.tolist() for lv in levels]
        changed = False
        new = choice.copy()
        for s in range(model.n_states):
            cand = list(range(offsets[s], offsets[s + 1]))
            if len(cand) > 1:
                for lv in levels:
                    top = max(lv[p] for p in cand)
                    cand = [p for p in cand if lv[p] >= top - tol]
                if choice[s] not in cand:
                    new[s] = cand[0]
                    changed = True
        if not changed:
            return choice, sol, w
        choice = new
    raise SolverError("policy iteration did not terminate")


def end_components(model: MdpModel, allowed: np.ndarray) -> list[np.ndarray]:
    """Maximal end components of the sub-MDP made of the allowed pairs."""
    allowed = np.asarray(allowed, dtype=bool)
    comps = _end_components(
        np.ascontiguousarray(model.kernel > 0).tobytes(), model.pair_state.tobytes(), model.n_states, allowed.tobytes()
    )
    return [c.copy() for c in comps]


@lru_cache(maxsize=4096)
def _end_components(support: bytes, pair_state: bytes, n_states: int, allowed: bytes) -> tuple:
    ps = np.frombuffer(pair_state, dtype=np.int64)
    supp = np.frombuffer(support, dtype=bool).reshape(-1, n_states)
    allowed = np.frombuffer(allowed, dtype=bool).copy()
    supports = [np.flatnonzero(row) for row in supp]
    while True:
        succ = [[] for _ in range(n_states)]
        for p in np.flatnonzero(allowed):
            succ[ps[p]].extend(supports[p].tolist())
        comp = scc([sorted(set(x)) for x in succ])
        drop = [p for p in np.flatnonzero(allowed) if any(comp[t] != comp[ps[p]] for t in supports[p])]
        if not drop:
            break
        allowed[drop] = False
    groups: dict[int, list[int]] = {}
    for p in np.flatnonzero(allowed):
        groups.setdefault(comp[ps[p]], []).append(int(p))
    comps = [np.array(sorted(g), dtype=np.int64) for g in groups.values()]
    comps.sort(key=lambda c: c[0])
    return tuple(comps)


@dataclass(frozen=True)
class OptimalSolution:
    opt_gain: float
    gain: np.ndarray  # per state; constant for communicating models
    opt_bias: np.ndarray
    gaps: np.ndarray
    bias_opt_policy: Policy
    choice: np.ndarray
    weakly_optimal_pairs: np.ndarray
    optimal_pairs: np.ndarray
    components: list

    def component_states(self, model: MdpModel) -> list[np.ndarray]:
        return [np.unique(model.pair_state[c]) for c in self.components]


def check_communicating(model: MdpModel):
    """(True, None) or (False, (s, s')) with s' unreachable from s."""
    succ = [[] for _ in range(model.n_states)]
    for p in range(model.n_pairs):
        succ[model.pair_state[p]].extend(np.flatnonzero(model.kernel[p] > 0).tolist())
    comp = scc([sorted(set(x)) for x in succ])
    if len(set(comp)) == 1:
        return True, None
    # find a witness pair of states
    for s in range(model.n_states):
        seen = {s}
        stack = [s]
        while stack:
            v = stack.pop()
            for w in succ[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        for t in range(model.n_states):
            if t not in seen:
                return False, (s, t)
    return False, None  # pragma: no cover


def require_communicating(model: MdpModel) -> None:
    ok, witness = check_communicating(model)
    if not ok:
        s, t = witness
        raise NotCommunicating(
            f"model {model.name!r} is not communicating: {model.state_labels[t]} unreachable from {model.state_labels[s]}",
            witness,
        )


def bellman_gaps(model: MdpModel, start=None):
    """(bias-optimal choice, optimal gain per state, optimal bias, gaps, k.g*)."""
    choice, sol, _ = bias_optimal_policy(model, start)
    g, h = sol.gain, sol.bias
    ps = model.pair_state
    gaps = g[ps] + h[ps] - model.reward - model.kernel @ h
    return choice, g, h, gaps, model.kernel @ g


def solve_multichain(model: MdpModel, start=None, tol_gap: float = TOL_GAP) -> OptimalSolution:
    """Optimal solution of an arbitrary (possibly multichain) model.

    Gaps are measured against the per-state optimal gain. A pair whose
    successor gain k.g* falls below g*(s) is never weakly optimal.
    """
    choice, g, h, gaps, kg = bellman_gaps(model, start)
    ps = model.pair_state
    weak_mask = (gaps <= tol_gap) & (kg >= g[ps] - tol_gap)
    components = end_components(model, weak_mask)
    optimal = np.sort(np.concatenate(components)) if components else np.zeros(0, dtype=np.int64)
    return OptimalSolution(
        opt_gain=float(np.max(g)),
        gain=g,
        opt_bias=h,
        gaps=gaps,
        bias_opt_policy=Policy.deterministic(model, choice),
        choice=choice,
        weakly_optimal_pairs=np.flatnonzero(weak_mask),
        optimal_pairs=optimal,
        components=components,
    )


def solve_optimal(model: MdpModel, start=None, cross_check: bool = True) -> OptimalSolution:
    """Bias-optimal solution of a communicating model, with pair classification."""
    require_communicating(model)
    sol = solve_multichain(model, start)
    span = float(np.ptp(sol.gain))
    if span > TOL_SOLVE:
        raise SolverError(f"optimal gain not constant (span {span:.3e})")
    if cross_check and model.n_deterministic_policies() <= ENUM_CAP:
        brute = optimal_pairs_bruteforce(model, sol.opt_gain)
        if not np.array_equal(brute, sol.optimal_pairs):
            raise SolverError(
                f"optimal pairs disagree: components give {sol.optimal_pairs.tolist()}, enumeration {brute.tolist()}"
            )
    return sol


def classify_pairs(model: MdpModel, sol: OptimalSolution, tol_gap: float = TOL_GAP):
    """(weakly optimal pairs, optimal pairs, components) from a solution."""
    weak_mask = sol.gaps <= tol_gap
    components = end_components(model, weak_mask)
    optimal = np.sort(np.concatenate(components)) if components else np.zeros(0, dtype=np.int64)
    return np.flatnonzero(weak_mask), optimal, components


def policy_gain(model: MdpModel, choice: np.ndarray):
    p = model.kernel[choice]
    return solve_chain(p, model.reward[choice])


def optimal_pairs_bruteforce(model: MdpModel, opt_gain: float | None = None, tol_gap: float = TOL_GAP) -> np.ndarray:
    """Union of recurrent pairs over all gain-optimal deterministic policies."""
    results = []
    for choice in model.deterministic_policies():
        results.append((choice, policy_gain(model, choice)))
    if opt_gain is None:
        opt_gain = max(float(np.min(sol.gain)) for _, sol in results)
    pairs = set()
    for choice, sol in results:
        if np.max(np.abs(opt_gain - sol.gain)) <= tol_gap:
            pairs.update(int(choice[s]) for s in sol.recurrent)
    return np.array(sorted(pairs), dtype=np.int64)

