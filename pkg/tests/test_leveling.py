import numpy as np
import pytest
from hypothesis import given, note, settings
from hypothesis import strategies as st

from avgmdp.errors import InvalidEpsilon
from avgmdp.instances import discontinuous_gaps, leveling_models, perturb, random_model, two_cycle
from avgmdp.leveling import (
    level,
    leveled_optimal_pairs,
    leveled_optimal_pairs_from_solution,
    leveling_constant,
    model_distance,
    support_aware_distance,
)
from avgmdp.model import MdpModel
from avgmdp.solver import solve_optimal
from avgmdp.structure import gain_gap
from conftest import small_models

MONOTONE_FINDINGS = []


def test_leveling_example_bumps_state_two_loop():
    _, m2 = leveling_models()
    lv = level(m2, 0.05)
    assert lv.bumped_pairs.tolist() == [3]
    assert lv.leveled_reward[3] == pytest.approx(0.52, abs=1e-9)
    assert np.array_equal(lv.leveled_reward[:3], m2.reward[:3])
    assert np.array_equal(lv.model.kernel, m2.kernel)


def test_leveling_example_recovers_both_loops():
    m, m2 = leveling_models()
    pairs, comps = leveled_optimal_pairs(m2, 0.05)
    assert pairs.tolist() == [1, 3] == solve_optimal(m).optimal_pairs.tolist()
    assert len(comps) == 2


def test_zero_gap_model_is_unchanged():
    m = two_cycle()
    lv = level(m, 0.1)
    assert lv.bumped_pairs.size == 0 and np.array_equal(lv.leveled_reward, m.reward)


def test_discontinuous_gaps_eps_02():
    m = discontinuous_gaps(0.1)
    lv = level(m, 0.2)
    assert lv.leveled_reward[3] == pytest.approx(0.6)
    assert lv.leveled_reward[0] == m.reward[0]


def test_eps_must_be_positive():
    with pytest.raises(InvalidEpsilon):
        level(two_cycle(), 0.0)


def test_small_eps_gives_optimal_pairs():
    m = discontinuous_gaps(0.1)
    pairs, _ = leveled_optimal_pairs(m, 0.05)
    assert pairs.tolist() == solve_optimal(m).optimal_pairs.tolist()


def test_leveling_constant_two_cycle():
    # D_w(2-cycle) = 2 under the S_1 = s indexing
    c = leveling_constant(two_cycle())
    assert (c.c_gain, c.c_gaps, c.c_total) == pytest.approx((12.0, 384.0, 768.0))


def test_leveling_constant_grows_with_slow_action():
    fast = MdpModel(actions=(("go", "stay"), ("go",)), kernel=[[0, 1], [1, 0], [1, 0]], reward=[0.5, 0.1, 0.5],
                    known=[True] * 3)
    slow = MdpModel(actions=(("go", "stay"), ("go",)), kernel=[[0.5, 0.5], [1, 0], [1, 0]], reward=[0.5, 0.1, 0.5],
                    known=[True] * 3)
    assert leveling_constant(slow).c_total > leveling_constant(fast).c_total


def test_support_aware_distance():
    m, m2 = leveling_models()
    assert support_aware_distance(m, m2) == pytest.approx(model_distance(m, m2)) == pytest.approx(0.02)
    k = m.kernel.copy()
    k[1] = [0.9, 0.1]
    assert support_aware_distance(m, m.replace(kernel=k)) == float("inf")


@given(small_models(max_states=4), st.floats(1e-3, 1.0))
def test_leveled_invariants(m, eps):
    sol = solve_optimal(m, cross_check=False)
    lv = level(m, eps, sol)
    below = sol.gaps < eps
    assert np.array_equal(lv.leveled_reward, m.reward + np.where(below, sol.gaps, 0.0))
    assert set(lv.bumped_pairs.tolist()) == set(np.flatnonzero(below & (sol.gaps > 0)).tolist())
    pairs, _ = leveled_optimal_pairs(m, eps, sol)
    assert set(sol.optimal_pairs.tolist()) <= set(pairs.tolist())
    c = leveling_constant(m)
    assert 1 <= c.c_gain <= c.c_total < np.inf


@given(small_models(max_states=4), st.floats(1e-3, 1.0))
def test_single_solve_shortcut_matches_two_solves(m, eps):
    sol = solve_optimal(m, cross_check=False)
    a, _ = leveled_optimal_pairs(m, eps, sol)
    b, _ = leveled_optimal_pairs_from_solution(m, eps, sol)
    assert np.array_equal(np.sort(a), np.sort(b))


@given(small_models(max_states=4))
def test_idempotent_without_bumps(m):
    sol = solve_optimal(m, cross_check=False)
    pos = sol.gaps[sol.gaps > 1e-9]
    eps = float(pos.min()) / 2 if pos.size else 1.0
    lv = level(m, eps, sol)
    if lv.bumped_pairs.size == 0:
        re = solve_optimal(lv.model, cross_check=False)
        assert re.opt_gain == pytest.approx(sol.opt_gain, abs=1e-12)
        assert np.allclose(re.opt_bias, sol.opt_bias, atol=1e-9)
        assert np.array_equal(re.optimal_pairs, sol.optimal_pairs)


@settings(max_examples=60)
@given(small_models(max_states=3), st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_monotone_inclusion_is_measured(m, e1, e2):
    """Recorded, not asserted: larger thresholds are not known to give larger sets."""
    e1, e2 = sorted((e1, e2))
    sol = solve_optimal(m, cross_check=False)
    a, _ = leveled_optimal_pairs(m, e1, sol)
    b, _ = leveled_optimal_pairs(m, e2, sol)
    if not set(a.tolist()) <= set(b.tolist()):
        MONOTONE_FINDINGS.append((m.name, e1, e2, a.tolist(), b.tolist()))
        note(f"counterexample: eps {e1} -> {a.tolist()}, eps {e2} -> {b.tolist()}")


def test_report_monotone_findings():
    print(f"monotone inclusion counterexamples found: {len(MONOTONE_FINDINGS)}")


@pytest.mark.parametrize("seed", range(10))
def test_robustness_under_constant_conditions(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 2, 2, density=1.0)
    gap = gain_gap(m)
    c = leveling_constant(m).c_total
    eps = 0.5 * gap
    delta = 0.5 * min(eps / c, (gap - eps) / (2 * c))
    alt = perturb(rng, m, delta)
    assert c * support_aware_distance(m, alt) < eps
    pairs, _ = leveled_optimal_pairs(alt, eps)
    assert np.array_equal(np.sort(pairs), solve_optimal(m).optimal_pairs)
