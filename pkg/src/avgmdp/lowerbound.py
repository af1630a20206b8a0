"""Regret lower-bound constants: information values, the regularized bound
K_E(M) by cutting planes, its vanishing-regularization limit, a policy-grid
upper estimate and the closed-form D^3 / gap^2 bound."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from .confusing import ConfusingCandidate, candidate_classes, confusing_weighted_kl_min
from .errors import NoExplorationNeeded, ResourceLimit, SolverError, ValidationError
from .leveling import leveled_optimal_pairs
from .measures import covering_measure, policy_stationary_measure
from .model import MdpModel, Policy
from .solver import OptimalSolution, solve_optimal
from .structure import diameter, gain_gap

CUT_TOL = 1e-6
MAX_CUTS = 200
GRID_CAP = 200000


@dataclass(frozen=True)
class RegularizerTriple:
    eps_flat: float = 0.0
    eps_unif: float = 0.0
    eps_reg: float = 0.0

    def __post_init__(self):
        if min(self.eps_flat, self.eps_unif, self.eps_reg) < 0:
            raise ValidationError("regularization parameters must be nonnegative")


@dataclass(frozen=True)
class LowerBoundSolution:
    value: float
    measure: np.ndarray
    cuts: list
    iterations: int
    converged: bool
    eps_unif: float  # value actually used, after clamping
    clamped: bool
    upper_value: float  # value of the rescaled measure that meets the information constraint exactly
    information: float  # information value of ``measure``


def information_value(mu, model: MdpModel, eps_flat: float = 0.0, sol: OptimalSolution | None = None, **kw):
    """Weighted distance to the confusing set, protecting the leveled optimal pairs."""
    if sol is None:
        sol = solve_optimal(model, cross_check=False)
    protected, _ = leveled_optimal_pairs(model, eps_flat, sol)
    value, _ = confusing_weighted_kl_min(mu, model, protected, sol.opt_gain, **kw)
    return value


class _OuterProblem:
    """min c.mu + eps_reg |mu|^2 over the eps-uniform invariant cone and the cuts."""

    def __init__(self, model: MdpModel, cost: np.ndarray, eps_unif: float, eps_reg: float):
        n = model.n_pairs
        self.n = n
        self.cost = cost
        flow = model.flow_matrix()[:-1]  # one flow row is redundant
        self.eq = sparse.csc_matrix(flow)
        same = (model.pair_state[:, None] == model.pair_state[None, :]).astype(float)
        ineq = [-np.eye(n)]
        if eps_unif > 0:
            ineq.append(eps_unif * same - np.eye(n))
        self.ineq = np.vstack(ineq)
        self.p = sparse.csc_matrix(sparse.triu(2.0 * eps_reg * sparse.eye(n)))
        self.cuts: list[np.ndarray] = []

    def solve(self) -> tuple[np.ndarray, float]:
        rows = [self.ineq]
        rhs = [np.zeros(self.ineq.shape[0])]
        if self.cuts:
            rows.append(-np.array(self.cuts))
            rhs.append(-np.ones(len(self.cuts)))
        a = sparse.vstack([self.eq, sparse.csc_matrix(np.vstack(rows))]).tocsc()
        b = np.concatenate([np.zeros(self.eq.shape[0])] + rhs)
        cones = [clarabel.ZeroConeT(self.eq.shape[0]), clarabel.NonnegativeConeT(sum(len(x) for x in rhs))]
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = 1e-11
        settings.tol_gap_rel = 1e-11
        settings.tol_feas = 1e-11
        out = clarabel.DefaultSolver(self.p, self.cost, a, b, cones, settings).solve()
        status = str(out.status)
        if "Solved" not in status:
            raise SolverError(f"outer problem not solved: {status}")
        mu = np.clip(np.array(out.x), 0.0, None)
        return mu, float(out.obj_val)


def regularized_lower_bound(
    model: MdpModel,
    reg: RegularizerTriple,
    sol: OptimalSolution | None = None,
    cut_tol: float = CUT_TOL,
    max_cuts: int = MAX_CUTS,
    warm_cuts: list | None = None,
    d: float | None = None,
) -> LowerBoundSolution:
    """K_E(M) and its optimal measure by a cutting-plane loop.

    The outer problem is a convex QP over eps_unif-uniform invariant
    measures constrained by the current cuts sum mu * kl_j >= 1. The inner
    problem returns the alternative that is closest to M under the current
    measure and its per-pair divergences become the next cut.
    """
    if sol is None:
        sol = solve_optimal(model, cross_check=False)
    if d is None:
        d = diameter(model)
    limit = 1.0 / (model.n_pairs * d)
    eps_unif = reg.eps_unif
    clamped = eps_unif >= limit
    if clamped:
        eps_unif = 0.99 * limit
    protected, _ = leveled_optimal_pairs(model, reg.eps_flat, sol)
    classes = candidate_classes(model)
    zero = np.zeros(model.n_pairs)

    def inner(mu):
        return confusing_weighted_kl_min(mu, model, protected, sol.opt_gain, classes=classes)

    start = covering_measure(model).weights
    first_value, first = inner(start)
    if first is None:
        # no confusing alternative: the information constraint is vacuous
        return LowerBoundSolution(0.0, zero, [], 0, True, eps_unif, clamped, 0.0, np.inf)
    outer = _OuterProblem(model, sol.opt_gain - model.reward, eps_unif, reg.eps_reg)
    cuts: list[ConfusingCandidate] = []
    for c in warm_cuts or []:
        outer.cuts.append(c.kl_per_pair)
        cuts.append(c)
    if not cuts:
        outer.cuts.append(first.kl_per_pair)
        cuts.append(first)
    converged = False
    iterations = 0
    mu, info = start, first_value
    while True:
        iterations += 1
        mu, _ = outer.solve()
        info, cand = inner(mu)
        if cand is None or info >= 1.0 - cut_tol:
            converged = True
            break
        if len(cuts) >= max_cuts:
            break
        outer.cuts.append(cand.kl_per_pair)
        cuts.append(cand)
    value = float(mu @ sol.gaps + reg.eps_reg * mu @ mu)
    if np.isfinite(info) and info > 0:
        scaled = mu / info
        upper = float(scaled @ sol.gaps + reg.eps_reg * scaled @ scaled)
    else:
        upper = value
    return LowerBoundSolution(value, mu, cuts, iterations, converged, eps_unif, clamped, max(upper, value), info)


def default_levels(n: int = 6) -> list[RegularizerTriple]:
    """Decreasing regularizers with eps_unif / eps_reg -> 0."""
    return [RegularizerTriple(10.0 ** (-2 - k), 10.0 ** (-4 - 2 * k), 10.0 ** (-3 - k)) for k in range(n)]


@dataclass(frozen=True)
class VanillaReport:
    value: float
    values: list
    levels: list
    extrapolated: float
    monotone: bool
    solutions: list = field(repr=False, default_factory=list)


def vanilla_lower_bound(model: MdpModel, levels=None, sol: OptimalSolution | None = None) -> VanillaReport:
    """Follow K_E(M) along decreasing regularizers; the last value is the estimate."""
    levels = default_levels() if levels is None else list(levels)
    if sol is None:
        sol = solve_optimal(model, cross_check=False)
    d = diameter(model)
    values, sols = [], []
    warm = None
    for reg in levels:
        lb = regularized_lower_bound(model, reg, sol, d=d, warm_cuts=warm)
        warm = lb.cuts
        values.append(lb.value)
        sols.append(lb)
    extrapolated = values[-1]
    if len(values) >= 2:
        s_prev = max(levels[-2].eps_flat, levels[-2].eps_unif, levels[-2].eps_reg)
        s_last = max(levels[-1].eps_flat, levels[-1].eps_unif, levels[-1].eps_reg)
        if s_prev > s_last > 0:
            ratio = s_last / s_prev
            extrapolated = values[-1] - (values[-2] - values[-1]) * ratio / (1 - ratio)
    monotone = all(b <= a + CUT_TOL * max(1.0, abs(a)) for a, b in zip(values, values[1:]))
    return VanillaReport(values[-1], values, levels, extrapolated, monotone, sols)


def _simplex_grid(n: int, steps: int):
    """Interior points of the n-simplex with coordinates in multiples of 1/steps."""
    if n == 1:
        yield (1.0,)
        return
    for cut in itertools.combinations(range(1, steps), n - 1):
        parts = np.diff((0,) + cut + (steps,))
        yield tuple(parts / steps)


def policywise_oracle(model: MdpModel, grid_resolution: float = 0.05, sol: OptimalSolution | None = None) -> float:
    """min over a grid of fully randomized policies of (g* - g_pi) / I(mu_pi)."""
    steps = int(round(1.0 / grid_resolution))
    if steps < 1:
        raise ValidationError("grid resolution must be at most 1")
    per_state = [list(_simplex_grid(model.n_actions(s), steps)) for s in range(model.n_states)]
    total = int(np.prod([len(x) for x in per_state], dtype=object))
    if total > GRID_CAP:
        raise ResourceLimit(f"{total} grid policies exceed the cap {GRID_CAP}")
    if total == 0:
        raise ValidationError("grid has no fully randomized policy; use a finer resolution")
    if sol is None:
        sol = solve_optimal(model, cross_check=False)
    classes = candidate_classes(model)
    best = np.inf
    for combo in itertools.product(*per_state):
        pol = Policy(np.concatenate(combo))
        mu = policy_stationary_measure(pol, model).weights
        loss = sol.opt_gain - float(mu @ model.reward)
        info, _ = confusing_weighted_kl_min(mu, model, sol.optimal_pairs, sol.opt_gain, classes=classes, build_model=False)
        ratio = 0.0 if not np.isfinite(info) else max(loss, 0.0) / info if info > 0 else np.inf
        best = min(best, ratio)
    return float(best)


@dataclass(frozen=True)
class CentralMeasure:
    measure: np.ndarray  # normalized to a probability
    total_mass: float
    value: float


def central_measure(model: MdpModel, level: RegularizerTriple | None = None, sol: OptimalSolution | None = None) -> CentralMeasure:
    """Optimal exploration measure at a fine regularization level."""
    level = level or RegularizerTriple(1e-4, 1e-8, 1e-6)
    if level.eps_reg > 0 and level.eps_unif / level.eps_reg > 0.01:
        raise ValidationError("central measure needs eps_unif / eps_reg <= 0.01")
    lb = regularized_lower_bound(model, level, sol)
    mass = float(lb.measure.sum())
    if lb.value <= 0 or mass <= 0:
        raise NoExplorationNeeded("the lower bound is zero; no exploration measure")
    return CentralMeasure(lb.measure / mass, mass, lb.value)


def simple_bound(model: MdpModel) -> float:
    """16 |P| D^3 / gap^2."""
    gap = gain_gap(model)
    return 16.0 * model.n_pairs * diameter(model) ** 3 / gap**2
