"""Invariant measures on pairs: membership, policy correspondence, covering,
uniformization and decomposition into unichain stationary laws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .chains import recurrent_classes, solve_chain
from .errors import DegenerateMeasure, NotFullySupported, NotInvariant, SolverError
from .model import MdpModel, Policy
from .solver import require_communicating
from .structure import diameter

TOL_FLOW = 1e-9


@dataclass(frozen=True)
class InvariantMeasure:
    weights: np.ndarray
    is_probability: bool

    @property
    def total(self) -> float:
        return float(self.weights.sum())


def flow_residual(mu: np.ndarray, model: MdpModel) -> float:
    return float(np.max(np.abs(model.state_mass(mu) - model.kernel.T @ mu)))


def uniformity_violation(mu: np.ndarray, model: MdpModel, eps: float) -> float:
    """Largest amount by which mu(s,a) falls short of eps * mu(s)."""
    need = eps * model.state_mass(mu)[model.pair_state]
    return float(np.max(need - mu))


def is_invariant(mu, model: MdpModel, eps: float = 0.0, tol: float = TOL_FLOW) -> bool:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (model.n_pairs,) or np.any(mu < -tol):
        return False
    if flow_residual(mu, model) > tol:
        return False
    return not (eps > 0 and uniformity_violation(mu, model, eps) > tol)


def policy_stationary_measure(policy: Policy, model: MdpModel) -> InvariantMeasure:
    """Unique probability invariant measure of a fully randomized policy."""
    policy.check(model)
    if not policy.fully_randomized():
        raise NotFullySupported("policy must put positive mass on every action")
    p, r = policy.chain(model)
    classes = recurrent_classes(p)
    if len(classes) != 1 or len(classes[0]) != model.n_states:
        raise NotFullySupported("the induced chain is not irreducible")
    nu = solve_chain(p, r, classes).stationaries[0]
    return InvariantMeasure(nu[model.pair_state] * policy.probs, True)


def induced_policy(mu, model: MdpModel, tol: float = 0.0) -> Policy:
    mu = np.asarray(mu, dtype=float)
    mass = model.state_mass(mu)
    if np.any(mass <= tol):
        raise DegenerateMeasure(f"zero mass at states {np.flatnonzero(mass <= tol).tolist()}")
    return Policy(mu / mass[model.pair_state])


def _eq_constraints(model: MdpModel):
    f = model.flow_matrix()
    return np.vstack([f, np.ones((1, model.n_pairs))]), np.concatenate([np.zeros(model.n_states), [1.0]])


def covering_measure(model: MdpModel) -> InvariantMeasure:
    """Probability invariant measure maximising its smallest entry."""
    require_communicating(model)
    n = model.n_pairs
    a_eq, b_eq = _eq_constraints(model)
    a_eq = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
    # mu(p) >= delta  <=>  delta - mu(p) <= 0
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * (n + 1), method="highs")
    if res.status != 0:
        raise SolverError(f"covering LP failed: {res.message}")
    mu = np.clip(res.x[:n], 0.0, None)
    return InvariantMeasure(mu / mu.sum(), True)


@dataclass(frozen=True)
class Uniformized:
    measure: InvariantMeasure
    epsilon: float
    clamped: bool
    blend: float


def uniformize(mu, model: MdpModel, eps: float, cover: InvariantMeasure | None = None, d: float | None = None) -> Uniformized:
    """Blend mu with the covering measure so that it becomes eps-uniform.

    ``eps`` is clamped to 0.99 / (|P| D) when it reaches that threshold.
    """
    mu = np.asarray(mu, dtype=float)
    if eps <= 0:
        return Uniformized(InvariantMeasure(mu.copy(), True), 0.0, False, 0.0)
    if d is None:
        d = diameter(model)
    limit = 1.0 / (model.n_pairs * d)
    clamped = eps >= limit
    if clamped:
        eps = 0.99 * limit
    if cover is None:
        cover = covering_measure(model)
    lam = eps / float(cover.weights.min())
    out = (1.0 - lam) * mu + lam * cover.weights
    return Uniformized(InvariantMeasure(out, True), eps, clamped, lam)


@dataclass(frozen=True)
class UnichainTerm:
    coefficient: float
    policy: Policy
    measure: np.ndarray
    pairs: np.ndarray  # recurrent pairs of the term's policy


def _find_cycle(model: MdpModel, support: np.ndarray) -> list[int]:
    """Simple closed path of supported pairs, started at the lowest supported pair."""
    ps = model.pair_state
    first = int(np.flatnonzero(support)[0])
    path: list[int] = []
    seen: dict[int, int] = {}
    p = first
    while True:
        s = int(ps[p])
        if s in seen:
            return path[seen[s]:]
        seen[s] = len(path)
        path.append(p)
        nxt = [int(t) for t in np.flatnonzero(model.kernel[p] > 0) if support[model.pairs_of(int(t))].any()]
        if not nxt:
            raise NotInvariant("support of the measure is not closed")
        t = nxt[0]
        p = int(model.offsets[t]) + int(np.flatnonzero(support[model.pairs_of(t)])[0])


def decompose_unichain(mu, model: MdpModel, tol: float = TOL_FLOW) -> list[UnichainTerm]:
    """Write an invariant measure as a nonnegative mix of unichain stationary laws.

    Each step follows supported pairs from the lowest supported pair until a
    state repeats, fixes those actions (and the lowest supported action at
    the other supported states), and peels off the largest multiple of the
    stationary law of the recurrent class reached from that cycle. Off that
    class the term's policy is uniform, which makes it unichain.
    """
    mu = np.array(mu, dtype=float)
    if np.any(mu < -tol) or flow_residual(mu, model) > tol * max(1.0, mu.sum()):
        raise NotInvariant("input is not an invariant measure")
    require_communicating(model)
    ps = model.pair_state
    rest = np.clip(mu, 0.0, None)
    scale = max(1.0, float(mu.sum()))
    terms: list[UnichainTerm] = []
    for _ in range(model.n_pairs + 1):
        support = rest > 1e-3 * tol * scale
        if not support.any():
            break
        try:
            cycle = _find_cycle(model, support)
        except NotInvariant:
            if rest.max() <= tol * scale:
                break  # leftover rounding noise
            raise
        choice = np.array(
            [model.offsets[s] + int(np.flatnonzero(support[model.pairs_of(s)])[0]) if support[model.pairs_of(s)].any() else model.offsets[s]
             for s in range(model.n_states)],
            dtype=np.int64,
        )
        for p in cycle:
            choice[ps[p]] = p
        p_det = model.kernel[choice]
        classes = recurrent_classes(p_det)
        start = int(ps[cycle[0]])
        # recurrent class reached from the cycle; it lies inside the closed support
        from_start = solve_chain(p_det, np.zeros(model.n_states), classes).absorption[start]
        cls = classes[int(np.flatnonzero(from_start > 0)[0])]
        pairs = np.sort(choice[cls])
        nu = solve_chain(p_det[np.ix_(cls, cls)], np.zeros(len(cls))).stationaries[0]
        stat = np.zeros(model.n_pairs)
        stat[choice[cls]] = nu
        ratios = rest[pairs] / stat[pairs]
        lam = float(ratios.min())
        rest = rest - lam * stat
        rest[pairs[np.argmin(ratios)]] = 0.0
        rest = np.clip(rest, 0.0, None)
        probs = Policy.uniform(model).probs.copy()
        for s in cls:
            probs[model.pairs_of(int(s))] = 0.0
            probs[choice[s]] = 1.0
        terms.append(UnichainTerm(lam, Policy(probs), stat, pairs))
    else:  # pragma: no cover
        raise SolverError("decomposition did not terminate")
    return terms


def reconstruct(terms: list[UnichainTerm], n_pairs: int) -> np.ndarray:
    out = np.zeros(n_pairs)
    for t in terms:
        out += t.coefficient * t.measure
    return out


def uniform_projection_distance(mu, model: MdpModel, eps: float) -> float:
    """l-infinity distance from mu to the eps-uniform probability invariant measures of model."""
    mu = np.asarray(mu, dtype=float)
    n = model.n_pairs
    a_eq, b_eq = _eq_constraints(model)
    a_eq = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
    eye = np.eye(n)
    one = np.ones((n, 1))
    # |nu - mu| <= t
    rows = [np.hstack([eye, -one]), np.hstack([-eye, -one])]
    rhs = [mu, -mu]
    if eps > 0:
        same_state = (model.pair_state[:, None] == model.pair_state[None, :]).astype(float)
        rows.append(np.hstack([eps * same_state - eye, np.zeros((n, 1))]))
        rhs.append(np.zeros(n))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * (n + 1), method="highs")
    if res.status != 0:
        raise SolverError(f"projection LP failed: {res.message}")
    return float(res.x[-1])


def gap_identity_residual(mu, model: MdpModel, gaps: np.ndarray, opt_gain: float) -> float:
    """|sum mu * gaps - sum mu * (g* - r)|, zero for every invariant measure."""
    mu = np.asarray(mu, dtype=float)
    return abs(float(mu @ gaps) - float(mu @ (opt_gain - model.reward)))
