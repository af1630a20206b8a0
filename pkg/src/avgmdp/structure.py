"""Diameters, gain gap and related structural constants of a model."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .chains import hitting_times, recurrent_classes, solve_chain
from .errors import NotCommunicating, ResourceLimit, SolverError
from .model import ENUM_CAP, MdpModel, Policy
from .solver import TOL_GAP, check_communicating, require_communicating, solve_optimal

COVER_CAP = 100000


def shortest_hitting_times(model: MdpModel, target: int, tol: float = 1e-12) -> np.ndarray:
    """Minimal expected hitting time of ``target`` from every state.

    Stochastic shortest path solved by policy iteration started from a
    breadth-first proper policy. Returns ``inf`` where the target is
    unreachable.
    """
    n = model.n_states
    ps = model.pair_state
    # breadth-first distances on the support graph towards the target
    dist = np.full(n, np.inf)
    dist[target] = 0
    choice = np.full(n, -1, dtype=np.int64)
    frontier = [target]
    while frontier:
        nxt = []
        for p in range(model.n_pairs):
            s = ps[p]
            if np.isinf(dist[s]) and np.any(model.kernel[p, frontier] > 0):
                dist[s] = dist[frontier[0]] + 1
                choice[s] = p
                nxt.append(s)
        frontier = sorted(set(nxt))
    out = np.full(n, np.inf)
    out[target] = 1.0
    reach = np.flatnonzero(np.isfinite(dist) & (np.arange(n) != target))
    if reach.size == 0:
        return out
    choice[target] = model.offsets[target]
    idx = np.flatnonzero(np.isfinite(dist))
    # pairs that may leave the set of states able to reach the target never help
    leaves = model.kernel[:, ~np.isfinite(dist)].sum(axis=1) > 0
    for _ in range(10000):
        v = hitting_times(model.kernel[choice], [target])
        q = 1.0 + model.kernel @ np.where(np.isfinite(v), v, 0.0)
        q[leaves] = np.inf
        changed = False
        new = choice.copy()
        for s in idx:
            if s == target:
                continue
            rng = model.pairs_of(s)
            best = min(rng, key=lambda p: (q[p], p))
            if q[best] < q[choice[s]] - tol:
                new[s] = best
                changed = True
        if not changed:
            out[reach] = v[reach]
            return out
        choice = new
    raise SolverError("shortest-path policy iteration did not terminate")


def diameter(model: MdpModel) -> float:
    """max over s != s' of the minimal expected hitting time of s' from s."""
    require_communicating(model)
    if model.n_states == 1:
        return 1.0
    best = 1.0
    for t in range(model.n_states):
        v = shortest_hitting_times(model, t)
        v = np.delete(v, t)
        best = max(best, float(v.max()))
    return best


def diameter_report(model: MdpModel) -> dict:
    """Diameter with a witness pair when the model is not communicating."""
    ok, witness = check_communicating(model)
    if not ok:
        return {"diameter": float("inf"), "witness": [model.state_labels[witness[0]], model.state_labels[witness[1]]]}
    return {"diameter": diameter(model), "witness": None}


def chain_diameter(p: np.ndarray, classes=None) -> float:
    """Policy diameter of a Markov chain: worst hitting time of a class cover."""
    if classes is None:
        classes = recurrent_classes(p)
    n_covers = int(np.prod([len(c) for c in classes], dtype=object))
    if n_covers > COVER_CAP:
        raise ResourceLimit(f"{n_covers} recurrent-class covers exceed the cap")
    best = 0.0
    for cover in itertools.product(*classes):
        best = max(best, float(hitting_times(p, list(cover)).max()))
    return best


def class_diameters(p: np.ndarray, classes=None) -> list[float]:
    """Diameter of the chain restricted to each recurrent class."""
    if classes is None:
        classes = recurrent_classes(p)
    return [chain_diameter(p[np.ix_(c, c)]) for c in classes]


def absorption_times(p: np.ndarray, classes=None) -> np.ndarray:
    """Expected time to reach the union of the recurrent classes."""
    if classes is None:
        classes = recurrent_classes(p)
    return hitting_times(p, np.concatenate(classes))


def policy_diameter(policy: Policy, model: MdpModel) -> float:
    p, _ = policy.chain(model)
    return chain_diameter(p)


def worst_diameter(model: MdpModel, cap: int = ENUM_CAP) -> float:
    """Largest policy diameter over deterministic policies."""
    require_communicating(model)
    return max(chain_diameter(model.kernel[c]) for c in model.deterministic_policies(cap))


def gain_gap(model: MdpModel, cap: int = ENUM_CAP, tol_gap: float = TOL_GAP) -> float:
    """Smallest sup-norm gain loss of a non gain-optimal deterministic policy.

    ``inf`` when every deterministic policy is gain-optimal.
    """
    g_star = solve_optimal(model, cross_check=False).opt_gain
    best = np.inf
    for c in model.deterministic_policies(cap):
        loss = float(np.max(g_star - solve_chain(model.kernel[c], model.reward[c]).gain))
        if loss > tol_gap:
            best = min(best, loss)
    return best


def dmin(model: MdpModel) -> float:
    """Smallest strictly positive kernel or Bernoulli reward parameter."""
    vals = [model.kernel[model.kernel > 0]]
    r = model.reward
    vals.append(r[r > 0])
    vals.append((1 - r)[r < 1])
    return float(np.min(np.concatenate(vals)))


@dataclass(frozen=True)
class StructuralQuantities:
    diameter: float
    worst_diameter: float
    gain_gap: float
    dmin: float
    policy_diameter: float | None = None


def structural_quantities(model: MdpModel, policy: Policy | None = None) -> StructuralQuantities:
    ok, witness = check_communicating(model)
    if not ok:
        raise NotCommunicating("model is not communicating", witness)
    return StructuralQuantities(
        diameter=diameter(model),
        worst_diameter=worst_diameter(model),
        gain_gap=gain_gap(model),
        dmin=dmin(model),
        policy_diameter=None if policy is None else policy_diameter(policy, model),
    )
