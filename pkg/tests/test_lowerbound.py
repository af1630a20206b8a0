import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from avgmdp.confusing import confusing_weighted_kl_min
from avgmdp.errors import InvalidWeights, NoExplorationNeeded, ValidationError
from avgmdp.instances import random_model, regret_discontinuity
from avgmdp.kl import bernoulli_kl, categorical_kl, pair_kl
from avgmdp.leveling import model_distance
from avgmdp.lowerbound import (
    CUT_TOL,
    RegularizerTriple,
    central_measure,
    default_levels,
    information_value,
    policywise_oracle,
    regularized_lower_bound,
    simple_bound,
    vanilla_lower_bound,
)
from avgmdp.measures import is_invariant
from avgmdp.model import MdpModel
from avgmdp.solver import solve_optimal
from avgmdp.structure import diameter, gain_gap

RD = regret_discontinuity()
KL_01 = oracles.kl(0.1, 0.5)


def _free_two_state(seed):
    rng = np.random.default_rng(seed)
    return random_model(rng, 2, [2, 2], density=1.0, known=False)


def _single_action():
    return MdpModel(actions=(("go",), ("go",)), kernel=[[0.3, 0.7], [0.6, 0.4]], reward=[0.2, 0.8], known=[True, True])


# --------------------------------------------------------------------------- kl


def test_bernoulli_kl_closed_form():
    assert bernoulli_kl(0.1, 0.5) == pytest.approx(0.1 * np.log(0.2) + 0.9 * np.log(1.8), rel=1e-14)
    assert bernoulli_kl(0.0, 0.5) == pytest.approx(np.log(2))
    assert bernoulli_kl(0.5, 0.0) == np.inf
    assert categorical_kl([0.5, 0.5], [1.0, 0.0]) == np.inf


@settings(max_examples=200)
@given(st.integers(2, 6), st.floats(0.0, 0.5), st.integers(0, 2**31))
def test_kl_perturbation_sandwich(m, eps, seed):
    rng = np.random.default_rng(seed)
    p2, q2 = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m))

    def shake(x):
        y = x * rng.uniform(1 - eps / 3, 1 + eps / 3, size=m)
        return y / y.sum()

    p, q = shake(p2), shake(q2)
    # smallest eps for which the ratio conditions hold
    eps = float(max(np.abs(p / p2 - 1).max(), np.abs(q / q2 - 1).max()))
    assert eps <= 0.5
    k, k2 = categorical_kl(p, q), categorical_kl(p2, q2)
    slack = 2 * eps * np.log(np.e * m) + 1e-12
    assert (1 - eps) * k2 - slack <= k <= (1 + eps) * k2 + slack
    assert (1 - eps) * k - slack <= k2 <= (1 + 2 * eps) * k + slack


# --------------------------------------------------------------------------- inner minimization


def test_regret_discontinuity_inner_value():
    sol = solve_optimal(RD)
    value, cand = confusing_weighted_kl_min(np.ones(4), RD, sol.optimal_pairs, sol.opt_gain)
    assert value == pytest.approx(KL_01, rel=1e-9)
    # 1-D oracle: raise r(sect) on a fine grid until the loop reaches gain 0.5
    grid = np.linspace(0.1, 0.999, 89901)
    assert value == pytest.approx(float(bernoulli_kl(0.1, grid[grid >= 0.5]).min()), rel=1e-6)
    assert cand.target_class.tolist() == [1]
    assert cand.achieved_gain >= sol.opt_gain - 1e-9


def test_single_action_model_has_no_confusing_alternative():
    m = _single_action()
    sol = solve_optimal(m)
    value, cand = confusing_weighted_kl_min(np.ones(2), m, sol.optimal_pairs, sol.opt_gain)
    assert value == np.inf and cand is None


def test_negative_weights_rejected():
    with pytest.raises(InvalidWeights):
        confusing_weighted_kl_min(-np.ones(4), RD, [], 0.5)


@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_inner_value_is_linear_in_weights(seed, scale):
    m = random_model(np.random.default_rng(seed), 3, 2)
    sol = solve_optimal(m, cross_check=False)
    w = np.random.default_rng(seed + 1).random(m.n_pairs)
    a, _ = confusing_weighted_kl_min(w, m, sol.optimal_pairs, sol.opt_gain)
    b, _ = confusing_weighted_kl_min(scale * w, m, sol.optimal_pairs, sol.opt_gain)
    if np.isfinite(a):
        assert b == pytest.approx(scale * a, rel=1e-7)


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.booleans())
def test_candidate_structure(seed, known):
    m = random_model(np.random.default_rng(seed), 3, 2, known=known)
    sol = solve_optimal(m, cross_check=False)
    w = np.random.default_rng(seed + 7).random(m.n_pairs) + 0.01
    value, cand = confusing_weighted_kl_min(w, m, sol.optimal_pairs, sol.opt_gain)
    if cand is None:
        return
    alt = cand.model
    prot = sol.optimal_pairs
    assert np.array_equal(alt.reward[prot], m.reward[prot]) and np.array_equal(alt.kernel[prot], m.kernel[prot])
    assert cand.achieved_gain >= sol.opt_gain - 1e-9
    assert float(w @ cand.kl_per_pair) == pytest.approx(value, rel=1e-9, abs=1e-12)
    assert np.allclose(cand.kl_per_pair, pair_kl(m, alt), rtol=0, atol=1e-10)
    changed = np.flatnonzero((alt.reward != m.reward) | np.any(alt.kernel != m.kernel, axis=1))
    assert set(changed.tolist()) <= set(cand.target_class.tolist())
    if not cand.kernel_refined:
        assert np.array_equal(alt.kernel, m.kernel)
    assert solve_optimal(alt, cross_check=False).opt_gain >= sol.opt_gain - 1e-7


@pytest.mark.parametrize("seed", range(6))
def test_free_kernel_inner_value_matches_grid(seed):
    m = _free_two_state(seed)
    sol = solve_optimal(m)
    if sol.optimal_pairs.size == 4:
        pytest.skip("every pair optimal")
    w = np.random.default_rng(seed).random(4) + 0.1
    value, _ = confusing_weighted_kl_min(w, m, sol.optimal_pairs, sol.opt_gain)
    grid = oracles.grid_information_free(m, w, set(sol.optimal_pairs.tolist()), sol.opt_gain)
    assert value <= grid * 1.02 + 1e-9
    assert value >= grid * 0.98


# --------------------------------------------------------------------------- information value


def test_information_value_unit_measure():
    assert information_value(np.ones(4), RD, 1e-3) == pytest.approx(KL_01, rel=1e-9)
    assert information_value(np.zeros(4), RD) == 0.0


@given(st.integers(0, 2**31))
def test_information_value_bounded_by_unit_measure(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3, 2)
    sol = solve_optimal(m, cross_check=False)
    mu = rng.dirichlet(np.ones(m.n_pairs))
    ie = information_value(np.ones(m.n_pairs), m, sol=sol)
    im = information_value(mu, m, sol=sol)
    if np.isfinite(ie):
        assert mu.min() * ie - 1e-12 <= im <= ie + 1e-12


@pytest.mark.parametrize("seed", range(8))
def test_gap_bound_of_information_value(seed):
    m = random_model(np.random.default_rng(seed), 3, 2)
    gap = gain_gap(m)
    if not np.isfinite(gap):
        pytest.skip("no suboptimal policy")
    assert information_value(np.ones(m.n_pairs), m) >= (gap / (4 * diameter(m))) ** 2


# --------------------------------------------------------------------------- regularized lower bound


def test_regularized_value_on_regret_discontinuity():
    t0 = time.perf_counter()
    lb = regularized_lower_bound(RD, RegularizerTriple(1e-3, 1e-4, 1e-6))
    assert lb.converged
    assert lb.value == pytest.approx(oracles.K_REGRET_DISCONTINUITY, rel=0.01)
    assert time.perf_counter() - t0 < 5


def test_solution_invariants():
    reg = RegularizerTriple(1e-3, 1e-4, 1e-4)
    lb = regularized_lower_bound(RD, reg)
    sol = solve_optimal(RD)
    assert is_invariant(lb.measure, RD, eps=lb.eps_unif, tol=1e-7 * max(1, lb.measure.sum()))
    for cut in lb.cuts:
        assert lb.measure @ cut.kl_per_pair >= 1 - 1e-6
    assert lb.value == pytest.approx(float(lb.measure @ sol.gaps + reg.eps_reg * lb.measure @ lb.measure), abs=1e-9)
    assert lb.value == pytest.approx(float(lb.measure @ (sol.opt_gain - RD.reward) + reg.eps_reg * lb.measure @ lb.measure),
                                     abs=1e-9)


def test_single_action_lower_bound_is_zero():
    lb = regularized_lower_bound(_single_action(), RegularizerTriple(1e-3, 1e-4, 1e-6))
    assert lb.value == 0.0 and not lb.measure.any()


def test_monotone_in_regularizers():
    levels = [RegularizerTriple(1e-2, 1e-3, 1e-2), RegularizerTriple(1e-3, 1e-4, 1e-3), RegularizerTriple(1e-4, 1e-5, 1e-4)]
    vals = [regularized_lower_bound(RD, e).value for e in levels]
    assert vals[0] >= vals[1] - CUT_TOL and vals[1] >= vals[2] - CUT_TOL
    rep = vanilla_lower_bound(RD, levels)
    assert vals[-1] >= rep.extrapolated - CUT_TOL


def test_eps_unif_clamp_reported():
    lb = regularized_lower_bound(RD, RegularizerTriple(1e-3, 0.5, 1e-3))
    assert lb.clamped and lb.eps_unif == pytest.approx(0.99 / (4 * diameter(RD)))


def test_negative_regularizer_rejected():
    with pytest.raises(ValidationError):
        RegularizerTriple(-1.0, 0.0, 0.0)


def test_vanilla_on_regret_discontinuity():
    rep = vanilla_lower_bound(RD)
    assert rep.monotone
    assert rep.value == pytest.approx(oracles.K_REGRET_DISCONTINUITY, rel=0.005)
    assert rep.value >= oracles.K_REGRET_DISCONTINUITY - 1e-6


@pytest.mark.parametrize("theta", [0.02, 0.05])
def test_vanilla_on_theta_family(theta):
    m = regret_discontinuity(theta)
    rep = vanilla_lower_bound(m)
    assert rep.value == pytest.approx(oracles.k_theta(theta), rel=0.05)


def test_theta_002_tracks_asymptotic_equivalent():
    theta = 0.02
    rep = vanilla_lower_bound(regret_discontinuity(theta))
    assert rep.value == pytest.approx(theta / oracles.kl(0.5 - theta, 0.5), rel=0.10)


def test_default_levels_decrease_with_vanishing_ratio():
    levels = default_levels()
    ratios = [e.eps_unif / e.eps_reg for e in levels]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert all(b.eps_reg < a.eps_reg for a, b in zip(levels, levels[1:]))


def test_continuity_along_shrinking_perturbations():
    reg = RegularizerTriple(1e-3, 1e-4, 1e-3)
    base = regularized_lower_bound(RD, reg).value
    direction = np.array([-1.0, 1.0, 0.5, -0.5])
    diffs = []
    for k in range(5):
        alt = RD.replace(reward=RD.reward + 1e-3 * 10.0**-k * direction)
        diffs.append(abs(regularized_lower_bound(alt, reg).value - base))
    assert all(b < a for a, b in zip(diffs, diffs[1:]))
    assert diffs[-1] < 1e-3


def test_continuity_with_kernel_perturbations():
    m = _free_two_state(3)
    reg = RegularizerTriple(1e-3, 1e-4, 1e-3)
    base = regularized_lower_bound(m, reg).value
    dk = np.array([[0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [-0.5, 0.5]]) * min(m.kernel.min(), 0.1)
    diffs = []
    for k in range(5):
        s = 1e-3 * 10.0**-k
        alt = m.replace(kernel=m.kernel + s * dk, reward=np.clip(m.reward + s * 1e-2, 0, 1))
        assert model_distance(m, alt) > 0
        diffs.append(abs(regularized_lower_bound(alt, reg).value - base))
    assert all(b < a for a, b in zip(diffs, diffs[1:]))
    assert diffs[-1] < 1e-3


# --------------------------------------------------------------------------- oracle, central measure, simple bound


def test_policywise_oracle_sandwich_on_regret_discontinuity():
    k = vanilla_lower_bound(RD).value
    oracle = policywise_oracle(RD, 0.05)
    assert k - CUT_TOL <= oracle <= 1.05 * k


def test_policywise_oracle_single_action_is_zero():
    assert policywise_oracle(_single_action(), 0.05) == 0.0


def test_central_measure_on_regret_discontinuity():
    cm = central_measure(RD)
    assert cm.measure.sum() == pytest.approx(1.0)
    assert is_invariant(cm.measure, RD, tol=1e-7)
    assert cm.measure[1] > 0  # the sect loop must be explored
    assert cm.value == pytest.approx(oracles.K_REGRET_DISCONTINUITY, rel=0.01)


def test_central_measure_needs_exploration():
    with pytest.raises(NoExplorationNeeded):
        central_measure(_single_action())


def test_simple_bound_regret_discontinuity():
    # 16 |P| D^3 / gap^2 with D = 2 and gap = 0.4
    assert simple_bound(RD) == pytest.approx(3200.0)
    assert vanilla_lower_bound(RD).value <= simple_bound(RD)


@pytest.mark.parametrize("seed", range(5))
def test_simple_bound_dominates_oracle(seed):
    m = random_model(np.random.default_rng(100 + seed), 2, 2)
    if not np.isfinite(gain_gap(m)):
        pytest.skip("no suboptimal policy")
    assert policywise_oracle(m, 0.1) <= simple_bound(m)
