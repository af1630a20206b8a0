"""Finite Markov chain analysis: classes, stationary laws, gain, bias, hitting times.

Hitting times follow the convention ``tau_A = inf{t >= 1 : S_t in A}`` with
``S_1`` the starting state, so a chain started inside ``A`` has ``tau_A = 1``
and each transition adds one.
"""

from __future__ import annotations

from dataclasses import dataclass

from functools import lru_cache

import numpy as np

TOL_SOLVE = 1e-10


def scc(succ: list) -> list[int]:
    """Strongly connected component label of every node (iterative Tarjan)."""
    n = len(succ)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    comp = [-1] * n
    stack: list[int] = []
    counter = 0
    n_comp = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, i = work[-1]
            if i < len(succ[v]):
                work[-1] = (v, i + 1)
                w = succ[v][i]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    u = work[-1][0]
                    low[u] = min(low[u], low[v])
                if low[v] == index[v]:
                    while True:
                        w = stack.pop()
                        on_stack[w] = False
                        comp[w] = n_comp
                        if w == v:
                            break
                    n_comp += 1
    return comp


def successors(p: np.ndarray) -> list:
    return [list(np.flatnonzero(row > 0)) for row in p]


def recurrent_classes(p: np.ndarray) -> list[np.ndarray]:
    """Closed communicating classes, each sorted, ordered by smallest state."""
    p = np.asarray(p)
    classes = _recurrent_from_support(np.ascontiguousarray(p > 0).tobytes(), p.shape[0])
    return [c.copy() for c in classes]


@lru_cache(maxsize=8192)
def _recurrent_from_support(support: bytes, n: int) -> tuple:
    succ = [list(np.flatnonzero(row)) for row in np.frombuffer(support, dtype=bool).reshape(n, n)]
    comp = scc(succ)
    n_comp = max(comp) + 1
    closed = [True] * n_comp
    for v, ws in enumerate(succ):
        for w in ws:
            if comp[w] != comp[v]:
                closed[comp[v]] = False
    members: dict[int, list[int]] = {}
    for v, c in enumerate(comp):
        if closed[c]:
            members.setdefault(c, []).append(v)
    classes = [np.array(sorted(m), dtype=np.int64) for m in members.values()]
    classes.sort(key=lambda c: c[0])
    return tuple(classes)


def stationary(p_class: np.ndarray) -> np.ndarray:
    """Stationary law of an irreducible transition matrix."""
    n = p_class.shape[0]
    if n == 1:
        return np.ones(1)
    a = (np.eye(n) - p_class).T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    nu = np.linalg.solve(a, b)
    nu = np.clip(nu, 0.0, None)
    return nu / nu.sum()


@dataclass(frozen=True)
class ChainSolution:
    gain: np.ndarray
    bias: np.ndarray
    classes: list
    stationaries: list  # full-length state vectors, one per class
    class_of: np.ndarray  # class index of each state, -1 if transient
    absorption: np.ndarray  # (n_states, n_classes) probability of ending in each class

    @property
    def transient(self) -> np.ndarray:
        return np.flatnonzero(self.class_of < 0)

    @property
    def recurrent(self) -> np.ndarray:
        return np.flatnonzero(self.class_of >= 0)

    @property
    def unichain(self) -> bool:
        return len(self.classes) == 1


def solve_chain(p: np.ndarray, r: np.ndarray, classes=None) -> ChainSolution:
    """Gain and Cesaro bias of the Markov reward process (r, p).

    The bias is normalised so that every stationary law integrates it to 0.
    """
    n = p.shape[0]
    if classes is None:
        classes = recurrent_classes(p)
    class_of = np.full(n, -1, dtype=np.int64)
    gain = np.zeros(n)
    bias = np.zeros(n)
    stats = []
    for i, c in enumerate(classes):
        class_of[c] = i
        pc = p[np.ix_(c, c)]
        nu = stationary(pc)
        full = np.zeros(n)
        full[c] = nu
        stats.append(full)
        g = float(nu @ r[c])
        gain[c] = g
        m = np.eye(len(c)) - pc + nu[None, :]
        bias[c] = np.linalg.solve(m, r[c] - g)
    absorption = np.zeros((n, len(classes)))
    for i, c in enumerate(classes):
        absorption[c, i] = 1.0
    trans = np.flatnonzero(class_of < 0)
    if trans.size:
        rec = np.flatnonzero(class_of >= 0)
        a = np.eye(trans.size) - p[np.ix_(trans, trans)]
        p_tr = p[np.ix_(trans, rec)]
        absorption[trans] = np.linalg.solve(a, p_tr @ absorption[rec])
        gain[trans] = np.linalg.solve(a, p_tr @ gain[rec])
        bias[trans] = np.linalg.solve(a, r[trans] - gain[trans] + p_tr @ bias[rec])
    return ChainSolution(gain, bias, classes, stats, class_of, absorption)


def poisson_residual(p: np.ndarray, r: np.ndarray, sol: ChainSolution) -> float:
    res = sol.gain + sol.bias - r - p @ sol.bias
    return float(np.max(np.abs(res)))


def hitting_times(p: np.ndarray, target) -> np.ndarray:
    """Expected ``tau_target`` from every state; ``inf`` where it is infinite."""
    n = p.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(target, dtype=np.int64)] = True
    out = np.ones(n)
    finite = _finite_hitting(p, mask)
    out[~finite] = np.inf
    ok = np.flatnonzero(finite & ~mask)
    if ok.size:
        a = np.eye(ok.size) - p[np.ix_(ok, ok)]
        out[ok] = np.linalg.solve(a, 1.0 + p[np.ix_(ok, np.flatnonzero(mask))].sum(axis=1))
    return out


def _finite_hitting(p: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """States whose expected hitting time of the target set is finite."""
    support = p > 0
    can = mask.copy()
    while True:
        new = can | support[:, can].any(axis=1)
        if np.array_equal(new, can):
            break
        can = new
    # a state is bad if it can move, avoiding the target, into a state that cannot reach it
    bad = ~can
    while True:
        new = bad | (~mask & support[:, bad].any(axis=1))
        if np.array_equal(new, bad):
            break
        bad = new
    return ~bad
