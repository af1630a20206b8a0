"""The leveling transform: raise every reward whose gap is below a threshold by that gap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidEpsilon
from .model import MdpModel
from .solver import TOL_GAP, OptimalSolution, end_components, solve_multichain, solve_optimal
from .structure import worst_diameter


@dataclass(frozen=True)
class LeveledModel:
    base: MdpModel
    epsilon: float
    leveled_reward: np.ndarray
    bumped_pairs: np.ndarray
    model: MdpModel  # base with the leveled rewards


def level(model: MdpModel, eps: float, sol: OptimalSolution | None = None) -> LeveledModel:
    """r~(p) = r(p) + gap(p) when gap(p) < eps, unchanged otherwise."""
    if not eps > 0:
        raise InvalidEpsilon(f"leveling threshold must be positive, got {eps}")
    if sol is None:
        sol = solve_optimal(model, cross_check=False)
    gaps = sol.gaps
    low = gaps < eps
    reward = model.reward + np.where(low, gaps, 0.0)
    bumped = np.flatnonzero(low & (gaps > 0))
    leveled = model.replace(reward=reward, bounded_rewards=False, name=f"{model.name}_leveled")
    return LeveledModel(model, eps, reward, bumped, leveled)


def leveled_optimal_pairs(model: MdpModel, eps: float, sol: OptimalSolution | None = None):
    """Optimal pairs and components of the leveled model.

    ``eps == 0`` returns the optimal pairs of the model itself.
    """
    if sol is None:
        sol = solve_optimal(model, cross_check=False)
    if eps == 0:
        return sol.optimal_pairs, sol.components
    lv = level(model, eps, sol)
    if lv.bumped_pairs.size == 0 and np.array_equal(lv.leveled_reward, model.reward):
        return sol.optimal_pairs, sol.components
    leveled = solve_multichain(lv.model, start=sol.choice)
    return leveled.optimal_pairs, leveled.components


def leveled_candidates(model: MdpModel, eps: float, gain: np.ndarray, gaps: np.ndarray, kg=None, tol_gap: float = TOL_GAP):
    """Pairs that become weakly optimal after leveling at eps."""
    ps = model.pair_state
    kg = model.kernel @ gain if kg is None else kg
    return (kg >= gain[ps] - tol_gap) & ((gaps < eps) | (gaps <= tol_gap))


def leveled_optimal_pairs_from_solution(model: MdpModel, eps: float, sol: OptimalSolution, tol_gap: float = TOL_GAP):
    """Same result as ``leveled_optimal_pairs`` from a single solve.

    Leveling closes exactly the gaps below eps, so the optimal gain and bias
    of the model still solve the optimality equations of the leveled model.
    Its optimal pairs are then the end components of the pairs whose gap is
    below max(eps, tol) among those that keep the optimal gain.
    """
    comps = end_components(model, leveled_candidates(model, eps, sol.gain, sol.gaps, tol_gap=tol_gap))
    pairs = np.sort(np.concatenate(comps)) if comps else np.zeros(0, dtype=np.int64)
    return pairs, comps


def model_distance(m1: MdpModel, m2: MdpModel) -> float:
    """max over pairs of |r1 - r2| + |k1 - k2|_1."""
    return float(np.max(np.abs(m1.reward - m2.reward) + np.abs(m1.kernel - m2.kernel).sum(axis=1)))


def support_aware_distance(m1: MdpModel, m2: MdpModel) -> float:
    """The plain model distance, or +inf as soon as one kernel support differs."""
    if not np.array_equal(m1.kernel > 0, m2.kernel > 0):
        return float("inf")
    return model_distance(m1, m2)


@dataclass(frozen=True)
class LevelingConstant:
    c_gain: float
    c_gaps: float
    c_total: float
    worst_diameter: float


def leveling_constant(model: MdpModel) -> LevelingConstant:
    """Conservative polynomial-in-D_w robustness constants of the leveling transform."""
    dw = worst_diameter(model)
    s = model.n_states
    c_gain = 2.0 * (1 + s) * dw
    c_gaps = 32.0 * (1 + s) * dw**2
    return LevelingConstant(c_gain, c_gaps, max(c_gain, c_gaps * dw), dw)
