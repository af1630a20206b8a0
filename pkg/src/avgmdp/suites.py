"""Randomized property suites shared by ``verify`` and the acceptance tests.

Every suite draws its instances from a seeded generator, checks one family of
inequalities or identities and returns a SuiteResult with the failures it saw.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .chains import solve_chain
from .confusing import confusing_weighted_kl_min
from .deviation import deviation_bounds, measured_deviations
from .errors import AvgMdpError
from .instances import perturb, random_model
from .leveling import level, leveled_optimal_pairs, leveling_constant, model_distance, support_aware_distance
from .lowerbound import GRID_CAP, policywise_oracle, simple_bound, vanilla_lower_bound
from .measures import (
    covering_measure,
    decompose_unichain,
    gap_identity_residual,
    policy_stationary_measure,
    reconstruct,
    uniformize,
)
from .model import MdpModel, Policy
from .solver import solve_optimal
from .structure import diameter, gain_gap

SUITE_SEED = 20240501


@dataclass
class SuiteResult:
    name: str
    draws: int = 0
    checks: int = 0
    failures: list = field(default_factory=list)
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.draws > 0 and not self.failures

    def fail(self, msg: str) -> None:
        self.failures.append(msg)

    def check(self, ok: bool, msg: str) -> None:
        self.checks += 1
        if not ok:
            self.fail(msg)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "draws": self.draws, "checks": self.checks,
                "failures": self.failures[:20], "n_failures": len(self.failures), "seconds": self.seconds,
                "details": self.details}


def _small_model(rng, max_states=3, max_actions=3, min_states=2):
    n = int(rng.integers(min_states, max_states + 1))
    return random_model(rng, n, max_actions, density=0.7)


def _random_policy(rng, model: MdpModel, full=True) -> Policy:
    w = rng.random(model.n_pairs) + (0.05 if full else 0.0)
    if not full:
        w[rng.random(model.n_pairs) < 0.5] = 0.0
        for s in range(model.n_states):
            pairs = model.pairs_of(s)
            if w[pairs.start:pairs.stop].sum() == 0:
                w[pairs.start + int(rng.integers(len(pairs)))] = 1.0
    mass = np.bincount(model.pair_state, weights=w, minlength=model.n_states)
    return Policy(w / mass[model.pair_state])


def _random_invariant(rng, model: MdpModel, k=3) -> np.ndarray:
    """Convex mix of stationary laws of random fully randomized policies."""
    coef = rng.dirichlet(np.ones(k))
    mu = np.zeros(model.n_pairs)
    for c in coef:
        mu += c * policy_stationary_measure(_random_policy(rng, model), model).weights
    return mu / mu.sum()


def invariant_measure_suite(draws: int = 200, seed: int = SUITE_SEED, tol: float = 1e-9) -> SuiteResult:
    """Covering floor, uniformization distance, decomposition and the gap identity."""
    res = SuiteResult("invariant_measures")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for i in range(draws):
        model = _small_model(rng)
        d = diameter(model)
        n = model.n_pairs
        cover = covering_measure(model)
        res.check(cover.weights.min() >= 1.0 / (n * d) - tol, f"draw {i}: covering min {cover.weights.min():.3e} < 1/(|P|D)")
        mu = _random_invariant(rng, model)
        eps = float(rng.uniform(0, 1.0 / (n * d)))
        uni = uniformize(mu, model, eps, cover, d)
        dist = float(np.max(np.abs(uni.measure.weights - mu)))
        res.check(dist <= n * d * uni.epsilon + tol, f"draw {i}: uniformize moved {dist:.3e} > |P|D eps")
        terms = decompose_unichain(mu, model)
        err = float(np.max(np.abs(reconstruct(terms, n) - mu)))
        res.check(err <= tol and len(terms) <= n, f"draw {i}: decomposition error {err:.3e} with {len(terms)} terms")
        sol = solve_optimal(model, cross_check=False)
        gap = gap_identity_residual(mu, model, sol.gaps, sol.opt_gain)
        res.check(gap <= tol, f"draw {i}: gap identity residual {gap:.3e}")
        res.draws += 1
    res.seconds = time.perf_counter() - t0
    return res


def deviation_suite(draws: int = 500, seed: int = SUITE_SEED + 1, size: float = 0.05, slack: float = 1e-9) -> SuiteResult:
    """Measured gain, bias, measure and diameter deviations stay below their bounds."""
    res = SuiteResult("deviation_bounds")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    fields = (("gain", "gain_bound"), ("bias", "bias_bound"), ("invariant_measure", "invariant_measure_bound"),
              ("diameter", "diameter_bound"), ("reaching_prob", "reaching_prob_bound"),
              ("policy_diameter", "policy_diameter_bound"))
    tight = {f: 0.0 for f, _ in fields}
    for i in range(draws):
        model = _small_model(rng)
        alt = perturb(rng, model, float(rng.uniform(0, size)))
        if support_aware_distance(model, alt) > size:
            res.fail(f"draw {i}: perturbation left the ball")
            continue
        pol = _random_policy(rng, model, full=bool(rng.random() < 0.5))
        bounds = deviation_bounds(pol, model, alt)
        meas = measured_deviations(pol, model, alt)
        for f, b in fields:
            m, bound = getattr(meas, f), getattr(bounds, b)
            if m is None or bound is None:
                continue
            res.check(m <= bound + slack, f"draw {i}: {f} deviation {m:.3e} exceeds bound {bound:.3e}")
            if bound > 0:
                tight[f] = max(tight[f], m / bound)
        res.draws += 1
    res.details["max_ratio"] = tight
    res.seconds = time.perf_counter() - t0
    return res


def gain_optimal_policies(model: MdpModel, opt_gain: float, tol: float = 1e-9) -> set:
    out = set()
    for choice in model.deterministic_policies():
        sol = solve_chain(model.kernel[choice], model.reward[choice])
        if np.max(np.abs(sol.gain - opt_gain)) <= tol:
            out.add(tuple(choice.tolist()))
    return out


def leveling_robustness_suite(draws: int = 500, seed: int = SUITE_SEED + 2) -> SuiteResult:
    """Leveling a close model at eps recovers the optimal pairs and optimal policies."""
    res = SuiteResult("leveling_robustness")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    attempts = 0
    while res.draws < draws and attempts < 20 * draws:
        attempts += 1
        model = _small_model(rng)
        sol = solve_optimal(model, cross_check=False)
        gap = gain_gap(model)
        if not np.isfinite(gap) or gap <= 1e-6:
            continue
        c = leveling_constant(model).c_total
        eps = float(rng.uniform(0.1, 0.9)) * gap
        delta = float(rng.uniform(0.05, 0.95)) * min(eps / c, (gap - eps) / (2 * c))
        alt = perturb(rng, model, delta)
        dist = support_aware_distance(model, alt)
        if not (c * dist < eps and eps + 2 * c * dist < gap):
            continue
        i = res.draws
        lev_pairs, _ = leveled_optimal_pairs(alt, eps)
        res.check(np.array_equal(np.sort(lev_pairs), sol.optimal_pairs),
                  f"draw {i}: leveled pairs {np.sort(lev_pairs).tolist()} != optimal pairs {sol.optimal_pairs.tolist()}")
        lv = level(alt, eps)
        lv_gain = solve_optimal(lv.model, cross_check=False).opt_gain
        res.check(gain_optimal_policies(lv.model, lv_gain) == gain_optimal_policies(model, sol.opt_gain),
                  f"draw {i}: gain-optimal policy sets differ")
        res.draws += 1
    res.details["attempts"] = attempts
    res.seconds = time.perf_counter() - t0
    return res


def oracle_resolution(model: MdpModel, cap: int = 20000) -> float:
    """Finest 1/k grid whose number of fully randomized policies stays below ``cap``."""
    from math import comb

    best = None
    for steps in range(2, 41):
        total = 1
        for s in range(model.n_states):
            k = model.n_actions(s)
            total *= comb(steps - 1, k - 1) if k > 1 else 1
        if total > min(cap, GRID_CAP):
            break
        if all(model.n_actions(s) <= steps for s in range(model.n_states)):
            best = steps
    return 1.0 / (best or 3)


def sandwich_suite(draws: int = 100, seed: int = SUITE_SEED + 3, oracle_cap: int = 2000, rel: float = 0.05) -> SuiteResult:
    """0 <= K_E <= policy-grid oracle (+rel), K_E <= simple bound, information and cut distance floors."""
    res = SuiteResult("sandwich")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = {"K_over_oracle": 0.0, "K_over_simple": 0.0}
    while res.draws < draws:
        model = _small_model(rng)
        sol = solve_optimal(model, cross_check=False)
        gap = gain_gap(model)
        if not np.isfinite(gap) or gap <= 1e-6:
            continue
        i = res.draws
        d = diameter(model)
        try:
            rep = vanilla_lower_bound(model, sol=sol)
        except AvgMdpError as exc:
            res.fail(f"draw {i}: lower bound failed: {exc}")
            res.draws += 1
            continue
        k = rep.value
        oracle = policywise_oracle(model, oracle_resolution(model, oracle_cap), sol)
        sb = simple_bound(model)
        res.check(k >= -1e-9, f"draw {i}: K_E = {k:.3e} < 0")
        res.check(k <= oracle * (1 + rel) + 1e-9, f"draw {i}: K_E = {k:.6g} above oracle {oracle:.6g}")
        res.check(k <= sb, f"draw {i}: K_E = {k:.6g} above simple bound {sb:.6g}")
        if np.isfinite(oracle) and oracle > 0:
            worst["K_over_oracle"] = max(worst["K_over_oracle"], k / oracle)
        worst["K_over_simple"] = max(worst["K_over_simple"], k / sb)
        floor = gap / (4 * d)
        info_e, _ = confusing_weighted_kl_min(np.ones(model.n_pairs), model, sol.optimal_pairs, sol.opt_gain,
                                              build_model=False)
        res.check(info_e >= floor**2 - 1e-12, f"draw {i}: I(e, M) = {info_e:.3e} < (gap/4D)^2 = {floor**2:.3e}")
        for lb in rep.solutions:
            for cut in lb.cuts:
                if cut.model is None:
                    continue
                dist = model_distance(model, cut.model)
                res.check(dist >= floor - 1e-6, f"draw {i}: cut at distance {dist:.3e} < gap/4D = {floor:.3e}")
        res.draws += 1
    res.details["worst"] = worst
    res.seconds = time.perf_counter() - t0
    return res


SUITES = {
    "invariant_measures": invariant_measure_suite,
    "deviation_bounds": deviation_suite,
    "leveling_robustness": leveling_robustness_suite,
    "sandwich": sandwich_suite,
}


def run_suites(names=None, scale: float = 1.0) -> list[SuiteResult]:
    """Run the named suites (all by default); ``scale`` shrinks the draw counts."""
    defaults = {"invariant_measures": 200, "deviation_bounds": 500, "leveling_robustness": 500, "sandwich": 100}
    out = []
    for name in names or list(SUITES):
        draws = max(1, int(round(defaults[name] * scale)))
        out.append(SUITES[name](draws=draws))
    return out


__all__ = ["SuiteResult", "SUITES", "run_suites", "invariant_measure_suite", "deviation_suite",
           "leveling_robustness_suite", "sandwich_suite", "oracle_resolution", "gain_optimal_policies"]
