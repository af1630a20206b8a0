"""Perturbation bounds for policy gain, bias, invariant laws and diameters.

Each bound is the explicit right-hand side of a deviation inequality for a
policy evaluated in two models M and M' that share the same pairs. Bounds
whose preconditions fail are reported as ``None`` together with the reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chains import solve_chain
from .errors import BoundNotApplicable
from .model import MdpModel, Policy
from .solver import check_communicating
from .structure import absorption_times, chain_diameter, class_diameters, diameter

SPAN_TOL = 1e-10


def kernel_distance(k1: np.ndarray, k2: np.ndarray) -> float:
    """max over rows of the l1 distance."""
    return float(np.max(np.abs(k1 - k2).sum(axis=1)))


def reward_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    return float(np.max(np.abs(r1 - r2)))


def equivalent(k1: np.ndarray, k2: np.ndarray) -> bool:
    return bool(np.array_equal(k1 > 0, k2 > 0))


def span(x: np.ndarray) -> float:
    return float(np.max(x) - np.min(x)) if x.size else 0.0


@dataclass(frozen=True)
class DeviationBounds:
    gain_bound: float | None
    bias_bound: float | None
    invariant_measure_bound: float | None
    diameter_bound: float | None
    reaching_prob_bound: float | None
    policy_diameter_bound: float | None
    not_applicable: dict = field(default_factory=dict)

    def require(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise BoundNotApplicable(*self.not_applicable.get(name, (name, "")))
        return value


@dataclass(frozen=True)
class MeasuredDeviations:
    gain: float
    bias: float | None  # only reported for unichain chains
    invariant_measure: float | None
    diameter: float | None
    reaching_prob: float | None
    policy_diameter: float | None


def _chains(policy: Policy, m1: MdpModel, m2: MdpModel):
    p1, r1 = policy.chain(m1)
    p2, r2 = policy.chain(m2)
    return p1, r1, p2, r2


def deviation_bounds(policy: Policy, m1: MdpModel, m2: MdpModel) -> DeviationBounds:
    """Evaluate every applicable deviation bound on (policy, m1, m2)."""
    policy.check(m1)
    policy.check(m2)
    p1, r1, p2, r2 = _chains(policy, m1, m2)
    dr = reward_distance(r1, r2)
    dp = kernel_distance(p1, p2)
    s1 = solve_chain(p1, r1)
    s2 = solve_chain(p2, r2)
    equiv = equivalent(p1, p2)
    na: dict = {}
    classes = s1.classes
    k = len(classes)
    rec = s1.recurrent

    # gain
    if span(s1.gain) <= SPAN_TOL:
        h_span = span(s1.bias[rec]) if equiv else span(s1.bias)
        gain_bound = dr + 0.5 * h_span * dp
    elif equiv:
        terms = []
        for p, sol in ((p1, s1), (p2, s2)):
            spans = max(span(sol.bias[c]) for c in classes)
            tau = float(np.max(absorption_times(p, classes)))
            terms.append(0.5 * (spans + 0.5 * k * tau))
        gain_bound = dr + min(terms) * dp
    else:
        gain_bound = None
        na["gain_bound"] = ("multichain gain variations", "kernels of the two chains are not equivalent")

    # invariant laws, bias, reaching probabilities, policy diameter need equivalent chains
    inv_bound = bias_bound = reach_bound = pdiam_bound = None
    if equiv:
        d1 = chain_diameter(p1, classes)
        d2 = chain_diameter(p2, classes)
        pdiam_bound = 0.5 * d1 * d2 * dp
        tau1 = absorption_times(p1, classes)
        tau2 = absorption_times(p2, classes)
        reach_bound = float(np.max(0.5 * np.minimum(tau1, tau2))) * dp
        if k == 1:
            inv_bound = min(d1, d2) * dp
            h1 = s1.bias
            h1_second = solve_chain(p1, -h1, classes).bias
            bias_bound = 4 * d2 * dr + (2 * d2 * span(h1) + 0.5 * span(h1_second)) * dp
        else:
            cd1 = max(class_diameters(p1, classes))
            cd2 = max(class_diameters(p2, classes))
            per_state = np.minimum(0.5 * (cd1 + 0.5 * k * tau1), 0.5 * (cd2 + 0.5 * k * tau2))
            inv_bound = float(np.max(per_state)) * dp
            bias_bound = 6 * d2 * dr + ((7 + 0.5 * k) * d2 * d1 + 2 * d1**2) * dp
    else:
        reason = "kernels of the two chains are not equivalent"
        for name, lemma in (
            ("invariant_measure_bound", "invariant measure variations"),
            ("bias_bound", "bias variations"),
            ("reaching_prob_bound", "reaching probabilities variations"),
            ("policy_diameter_bound", "variations of policy diameter"),
        ):
            na[name] = (lemma, reason)

    # model diameter
    diam_bound = None
    if not equivalent(m1.kernel, m2.kernel):
        na["diameter_bound"] = ("variations of diameter", "model kernels are not equivalent")
    elif not (check_communicating(m1)[0] and check_communicating(m2)[0]):
        na["diameter_bound"] = ("variations of diameter", "model is not communicating")
    else:
        diam_bound = 0.5 * diameter(m1) * diameter(m2) * kernel_distance(m1.kernel, m2.kernel)

    return DeviationBounds(
        gain_bound=gain_bound,
        bias_bound=bias_bound,
        invariant_measure_bound=inv_bound,
        diameter_bound=diam_bound,
        reaching_prob_bound=reach_bound,
        policy_diameter_bound=pdiam_bound,
        not_applicable=na,
    )


def measured_deviations(policy: Policy, m1: MdpModel, m2: MdpModel) -> MeasuredDeviations:
    """The actual deviations that the bounds above control."""
    p1, r1, p2, r2 = _chains(policy, m1, m2)
    s1 = solve_chain(p1, r1)
    s2 = solve_chain(p2, r2, s1.classes if equivalent(p1, p2) else None)
    gain = float(np.max(np.abs(s1.gain - s2.gain)))
    bias = inv = reach = pdiam = None
    if equivalent(p1, p2):
        if s1.unichain:
            bias = float(np.max(np.abs(s1.bias - s2.bias)))
            inv = float(np.max(np.abs(s1.stationaries[0] - s2.stationaries[0])))
        else:
            # asymptotic visit laws from each starting state
            law1 = s1.absorption @ np.array(s1.stationaries)
            law2 = s2.absorption @ np.array(s2.stationaries)
            inv = float(np.max(np.abs(law1 - law2)))
        reach = float(np.max(np.abs(s1.absorption - s2.absorption)))
        pdiam = abs(chain_diameter(p1, s1.classes) - chain_diameter(p2, s1.classes))
    diam = None
    if equivalent(m1.kernel, m2.kernel) and check_communicating(m1)[0]:
        diam = abs(diameter(m1) - diameter(m2))
    return MeasuredDeviations(gain, bias, inv, diam, reach, pdiam)
