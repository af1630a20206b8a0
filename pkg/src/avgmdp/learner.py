"""Learning agents: the ECoE* explore / co-explore / exploit loop with its
estimator, regularization schedules and GLR exploration test, plus two
baselines sharing the same reset / act / observe contract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .chains import recurrent_classes
from .confusing import candidate_classes, confusing_weighted_kl_min
from .errors import AvgMdpError, ValidationError
from .leveling import leveled_candidates
from .lowerbound import RegularizerTriple, regularized_lower_bound
from .measures import covering_measure
from .model import MdpModel, Policy
from .solver import bellman_gaps, check_communicating, copy_with, end_components, solve_multichain

PRIOR_REWARD = 0.5

# time-class tags written to traces
EXPLORE = "T-"
COEXPLORE = "T-,T+-"
EXPLOIT = "T+"
EXPLOIT_START = "T+,T+0"
PANIC = "T!"
PANIC_START = "T!,T+0"


# --------------------------------------------------------------------------- schedules


def _loglog(x: float) -> float:
    if x <= 1.0:
        return -math.inf
    lx = math.log(x)
    return math.log(lx) if lx > 0 else -math.inf


def _default_flat(t: float) -> float:
    return 1.0 / max(1.0, _loglog(t))


def _default_reg(m: float) -> float:
    return 1.0 / max(1.0, math.log(m) if m > 0 else -math.inf)


def _step_table(table) -> Callable[[float], float]:
    """Right-continuous step function from [[x0, v0], [x1, v1], ...]."""
    xs = np.array([float(x) for x, _ in table])
    vs = np.array([float(v) for _, v in table])
    if xs.size == 0 or np.any(np.diff(xs) <= 0) or np.any(vs < 0):
        raise ValidationError("schedule table needs increasing keys and nonnegative values")

    def f(x: float) -> float:
        i = int(np.searchsorted(xs, x, side="right")) - 1
        return float(vs[max(i, 0)])

    return f


@dataclass(frozen=True)
class Schedule:
    """Regularization maps: flat and test take the time t, unif and reg the explore count m."""

    flat: Callable[[float], float] = _default_flat
    test: Callable[[float], float] = _default_flat
    unif: Callable[[float], float] = _default_flat
    reg: Callable[[float], float] = _default_reg
    name: str = "default"


def default_schedule() -> Schedule:
    """1/max(1, log log t) for flat, test and unif (of m); 1/max(1, log m) for reg."""
    return Schedule()


def schedule_from_config(cfg) -> Schedule:
    """``"default"``, or a dict with optional step tables and/or scale factors.

    {"flat": [[1, 0.5], [1000, 0.2]], "scale": {"unif": 0.1}} replaces the
    flat map by the table and multiplies the default unif map by 0.1.
    """
    if cfg is None or cfg == "default":
        return default_schedule()
    if not isinstance(cfg, dict):
        raise ValidationError(f"unknown schedule {cfg!r}")
    base = default_schedule()
    maps = {k: getattr(base, k) for k in ("flat", "test", "unif", "reg")}
    unknown = set(cfg) - set(maps) - {"scale", "name"}
    if unknown:
        raise ValidationError(f"unknown schedule keys {sorted(unknown)}")
    for k in maps:
        if k in cfg:
            maps[k] = _step_table(cfg[k])
    for k, c in (cfg.get("scale") or {}).items():
        if k not in maps or float(c) < 0:
            raise ValidationError(f"bad scale entry {k!r}: {c!r}")
        maps[k] = (lambda f, c: (lambda x: c * f(x)))(maps[k], float(c))
    return Schedule(name=str(cfg.get("name", "custom")), **maps)


@dataclass(frozen=True)
class FlooredParams:
    eps_flat: float
    eps_test: float
    eps_unif: float
    eps_reg: float
    epoch: int  # floor(log2 m), 0 when m <= 1

    def triple(self) -> RegularizerTriple:
        return RegularizerTriple(self.eps_flat, self.eps_unif, self.eps_reg)


@dataclass
class ScheduleState:
    schedule: Schedule = field(default_factory=default_schedule)
    explore_count: int = 0

    def floored(self, t: int) -> FlooredParams:
        m = max(int(self.explore_count), 1)
        epoch = m.bit_length() - 1
        base = float(2**epoch)
        s = self.schedule
        return FlooredParams(s.flat(t), s.test(t), s.unif(base), s.reg(base), epoch)


@dataclass(frozen=True)
class ScheduleReport:
    violations: list
    spot_checks: dict

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_schedule(s: Schedule, t_grid=None, m_grid=None) -> ScheduleReport:
    """Check monotonicity (A1) and the decrease of unif/reg (A5) on a grid.

    The remaining properties are asymptotic; their defining ratios are only
    evaluated at the grid end points and reported.
    """
    t_grid = np.unique(np.round(np.logspace(0, 9, 200))) if t_grid is None else np.asarray(t_grid, dtype=float)
    m_grid = np.unique(np.round(np.logspace(0, 9, 200))) if m_grid is None else np.asarray(m_grid, dtype=float)
    violations = []
    for name, grid in (("flat", t_grid), ("test", t_grid), ("unif", m_grid), ("reg", m_grid)):
        vals = np.array([getattr(s, name)(x) for x in grid])
        if np.any(vals <= 0) or np.any(vals > 1):
            violations.append(f"{name}: values leave (0, 1]")
        up = np.flatnonzero(np.diff(vals) > 0)
        if up.size:
            violations.append(f"A1 {name}: increases after x={grid[up[0]]:g}")
    ratio = np.array([s.unif(m) / s.reg(m) for m in m_grid])
    up = np.flatnonzero(np.diff(ratio) > 0)
    if up.size:
        violations.append(f"A5 unif/reg: increases after m={m_grid[up[0]]:g} ({ratio[0]:.3g} -> {ratio[-1]:.3g})")
    t0, t1 = float(t_grid[0]), float(t_grid[-1])
    m0, m1 = float(m_grid[0]), float(m_grid[-1])
    spot = {
        "A0 max value at grid end": max(s.flat(t1), s.test(t1), s.unif(m1), s.reg(m1)),
        "A2 flat * log(T)": s.flat(t1) * math.log(t1),
        "A3 reg * m^0.5": s.reg(m1) * math.sqrt(m1),
        "A4 unif * log(m)": s.unif(m1) * math.log(m1),
        "A5 unif/reg at ends": (s.unif(m0) / s.reg(m0), s.unif(m1) / s.reg(m1)),
        "A6 reg*unif*m at ends": (s.reg(m0) * s.unif(m0) * m0, s.reg(m1) * s.unif(m1) * m1),
        "A7 test * log(T) / loglog(T)": s.test(t1) * math.log(t1) / _loglog(t1),
        "t0": t0,
    }
    return ScheduleReport(violations, spot)


def skeleton(counts, t: float) -> np.ndarray:
    """Pairs visited at least (ln t)^2 times."""
    counts = np.asarray(counts)
    thr = math.log(t) ** 2 if t > 1 else 0.0
    return np.flatnonzero(counts >= thr)


# --------------------------------------------------------------------------- estimator


@dataclass(frozen=True)
class LearnerShape:
    """What a learner may know about the environment: actions, which kernels
    are known, and those known kernel rows (other rows are zero)."""

    actions: tuple
    known: np.ndarray
    known_kernel: np.ndarray
    state_labels: tuple = ()
    name: str = "mdp"

    @classmethod
    def of(cls, model: MdpModel) -> "LearnerShape":
        kk = np.where(model.known[:, None], model.kernel, 0.0)
        return cls(model.actions, model.known.copy(), kk, model.state_labels, model.name)

    @property
    def n_states(self) -> int:
        return len(self.actions)

    @property
    def n_pairs(self) -> int:
        return int(self.known.size)


class Estimator:
    """Counts and the maximum likelihood model.

    Unvisited pairs get reward 0.5 and, when their kernel is unknown, the
    uniform kernel (they are flagged in ``unvisited``).
    """

    def __init__(self, shape: LearnerShape):
        self.shape = shape
        n, s = shape.n_pairs, shape.n_states
        self.counts = np.zeros(n, dtype=np.int64)
        self.reward_sums = np.zeros(n)
        self.transition_counts = np.zeros((n, s), dtype=np.int64)
        counts = [len(a) for a in shape.actions]
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.pair_state = np.repeat(np.arange(s), counts)
        self._cache = None
        self._template = None

    def observe(self, p: int, r: float, s2: int) -> bool:
        """Record one transition; returns True when (p, s2) had never been seen."""
        new = self.transition_counts[p, s2] == 0
        self.counts[p] += 1
        self.reward_sums[p] += r
        self.transition_counts[p, s2] += 1
        self._cache = None
        return bool(new)

    @property
    def unvisited(self) -> np.ndarray:
        return self.counts == 0

    def observed_support(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.transition_counts[p] > 0)

    def mle(self) -> MdpModel:
        if self._cache is not None:
            return self._cache
        sh = self.shape
        n = np.maximum(self.counts, 1)
        reward = np.where(self.counts > 0, self.reward_sums / n, PRIOR_REWARD)
        emp = self.transition_counts / n[:, None]
        free = np.where(self.counts[:, None] > 0, emp, 1.0 / sh.n_states)
        kernel = np.where(sh.known[:, None], sh.known_kernel, free)
        # exact row sums for the model validator
        kernel = kernel / kernel.sum(axis=1, keepdims=True)
        prev = self._template
        if prev is not None and np.array_equal(prev.kernel, kernel):
            self._cache = prev.with_reward(reward)
        else:
            self._cache = MdpModel(sh.actions, kernel, reward, sh.known, f"{sh.name}_mle", sh.state_labels)
            self._template = self._cache
        return self._cache


# --------------------------------------------------------------------------- phase ingredients


@dataclass(frozen=True)
class LeveledStructure:
    pairs: np.ndarray
    components: list
    component_states: list
    state_component: np.ndarray  # component index per state, -1 outside
    plus: np.ndarray  # exploitation policy probabilities
    plus_recurrent: np.ndarray  # states recurrent under the exploitation policy
    opt_gain: float = 0.0


def exploitation_policy(mhat: MdpModel, lev_pairs) -> Policy:
    """Uniform over leveled optimal actions where there are some, uniform elsewhere."""
    lev_pairs = np.asarray(lev_pairs, dtype=np.int64)
    mask = np.zeros(mhat.n_pairs)
    mask[lev_pairs] = 1.0
    has = mhat.state_mass(mask) > 0
    w = np.where(has[mhat.pair_state], mask, 1.0)
    return Policy(w / mhat.state_mass(w)[mhat.pair_state])


@lru_cache(maxsize=1024)
def _structure_for(support: bytes, offsets: bytes, allowed: bytes) -> LeveledStructure:
    """Everything in a phase that depends only on supports and the leveled set."""
    offs = np.frombuffer(offsets, dtype=np.int64)
    n_states = offs.size - 1
    supp = np.frombuffer(support, dtype=bool).reshape(-1, n_states)
    ps = np.repeat(np.arange(n_states), np.diff(offs))
    skeleton_model = MdpModel(
        tuple(tuple(str(a) for a in range(offs[s + 1] - offs[s])) for s in range(n_states)),
        supp / supp.sum(axis=1, keepdims=True), np.zeros(supp.shape[0]), np.ones(supp.shape[0], dtype=bool),
    )
    comps = end_components(skeleton_model, np.frombuffer(allowed, dtype=bool))
    pairs = np.sort(np.concatenate(comps)) if comps else np.zeros(0, dtype=np.int64)
    states = [np.unique(ps[c]) for c in comps]
    state_comp = np.full(n_states, -1, dtype=np.int64)
    for i, st in enumerate(states):
        state_comp[st] = i
    plus = exploitation_policy(skeleton_model, pairs)
    p_plus, _ = plus.chain(skeleton_model)
    rec = np.zeros(n_states, dtype=bool)
    for c in recurrent_classes(p_plus):
        rec[c] = True
    return LeveledStructure(pairs, comps, states, state_comp, plus.probs, rec)


def leveled_structure(mhat: MdpModel, eps_flat: float, start=None) -> tuple[LeveledStructure, np.ndarray]:
    """Leveled optimal pairs of the estimate, their components and the exploitation policy.

    Also returns the bias-optimal choice of the estimate for warm starts.
    """
    choice, g, _, gaps, kg = bellman_gaps(mhat, start)
    allowed = leveled_candidates(mhat, eps_flat, g, gaps, kg)
    base = _structure_for(np.ascontiguousarray(mhat.kernel > 0).tobytes(), mhat.offsets.tobytes(), allowed.tobytes())
    return copy_with(base, opt_gain=float(np.max(g))), choice


def induced_or_blended(mu, mhat: MdpModel, blend: float) -> Policy:
    """Induced policy of mu; states without mass get mixed with the covering measure."""
    mu = np.clip(np.asarray(mu, dtype=float), 0.0, None)
    total = mu.sum()
    mass = mhat.state_mass(mu)
    if total <= 0:
        mix = covering_measure(mhat).weights
    elif np.any(mass <= 0):
        lam = min(max(blend, 1e-6), 1.0)
        mix = (1 - lam) * mu / total + lam * covering_measure(mhat).weights
    else:
        mix = mu
    return Policy(mix / mhat.state_mass(mix)[mhat.pair_state])


def exploration_policy(mhat: MdpModel, params: FlooredParams) -> Policy:
    """Policy induced by the regularized optimal exploration measure of the estimate.

    Falls back to the covering measure when the bound is zero, and to the
    uniform policy when the estimate is not communicating.
    """
    if not check_communicating(mhat)[0]:
        return Policy.uniform(mhat)
    lb = regularized_lower_bound(mhat, params.triple())
    mu = lb.measure if lb.value > 0 else np.zeros(mhat.n_pairs)
    return induced_or_blended(mu, mhat, params.eps_unif)


def glr_statistic(counts, mhat: MdpModel, protected, opt_gain: float, refine_kernels: bool = True,
                  stop_below: float | None = None) -> float:
    """Weighted KL of the data to the closest confusing model.

    With ``stop_below`` the search ends at the first alternative within that
    level, which is all the test needs.
    """
    value, _ = confusing_weighted_kl_min(
        np.asarray(counts, dtype=float), mhat, protected, opt_gain,
        classes=candidate_classes(mhat), build_model=False, refine_kernels=refine_kernels, value_only=True,
        stop_below=stop_below,
    )
    return value


def glr_exploration_test(est: Estimator, t: int, state: ScheduleState, structure: LeveledStructure | None = None,
                         refine_kernels: bool = True, params: FlooredParams | None = None) -> bool:
    """True when some confusing model stays within (1 + eps_test) ln t of the data."""
    params = state.floored(t) if params is None else params
    try:
        mhat = est.mle()
        if structure is None:
            structure, _ = leveled_structure(mhat, params.eps_flat)
        protected = np.union1d(skeleton(est.counts, t), structure.pairs)
        level = (1.0 + params.eps_test) * math.log(max(t, 1))
        stat = glr_statistic(est.counts, mhat, protected, structure.opt_gain, refine_kernels, stop_below=level)
    except (AvgMdpError, np.linalg.LinAlgError, ValueError):
        return True
    return bool(stat <= level)


def square_trick_check(counts, lev_pairs, current_pairs) -> bool:
    """True (travel) when the least visited leveled optimal pair has fewer
    visits than the square root of the current component's minimum."""
    counts = np.asarray(counts)
    lev_pairs = np.asarray(lev_pairs, dtype=np.int64)
    current_pairs = np.asarray(current_pairs, dtype=np.int64)
    if lev_pairs.size == 0 or current_pairs.size == 0:
        return False
    return bool(counts[lev_pairs].min() < math.sqrt(counts[current_pairs].min()))


# --------------------------------------------------------------------------- learners


class Learner:
    """reset(seed, shape) / act(state) -> local action index / observe(s, a, r, s2)."""

    name = "learner"

    def reset(self, seed, shape: LearnerShape) -> None:
        self.shape = shape
        self.rng = np.random.Generator(np.random.Philox(seed))
        self.est = Estimator(shape)
        self.t = 1
        self.last_tag = ""
        self.last_phase = 0

    def act(self, state: int) -> int:  # pragma: no cover - abstract
        raise NotImplementedError

    def observe(self, s: int, a: int, r: float, s2: int) -> None:
        self.est.observe(int(self.est.offsets[s]) + a, r, s2)
        self.t += 1

    def _sample(self, probs: np.ndarray, s: int) -> int:
        lo, hi = int(self.est.offsets[s]), int(self.est.offsets[s + 1])
        return _draw(self.rng.random(), probs[lo:hi].tolist())


def _draw(u: float, w: list) -> int:
    """Index i with cumulative weight crossing u * sum(w)."""
    if len(w) == 1:
        return 0
    u *= sum(w)
    acc = 0.0
    for i, x in enumerate(w):
        acc += x
        if u < acc:
            return i
    return max(i for i, x in enumerate(w) if x > 0)


class UniformRandom(Learner):
    name = "uniform"

    def act(self, state: int) -> int:
        self.last_tag = EXPLORE
        return int(self.rng.integers(len(self.shape.actions[state])))


class GreedyMLE(Learner):
    """Plays the bias-optimal policy of the current estimate."""

    name = "greedy"

    def reset(self, seed, shape):
        super().reset(seed, shape)
        self._choice = None

    def act(self, state: int) -> int:
        sol = solve_multichain(self.est.mle(), self._choice)
        self._choice = sol.choice
        self.last_tag = EXPLOIT
        return int(sol.choice[state] - self.est.offsets[state])


@dataclass
class EcoeStats:
    phases: int = 0
    explore_steps: int = 0
    coexplore_steps: int = 0
    exploit_steps: int = 0
    panics: int = 0
    regenerations: int = 0
    forced_explorations: int = 0  # current state outside the recurrent leveled structure
    lower_bound_solves: int = 0
    fallbacks: int = 0


class Ecoe(Learner):
    """The ECoE* phase loop.

    A phase starts in ``act`` whenever no exploitation run is in progress. It
    refreshes the floored regularizers, the estimate, the leveled optimal
    pairs and their components, then either explores once (the state is not
    recurrent under the exploitation policy, or the GLR test fires),
    co-explores once (square trick), or starts exploiting until the start
    state recurs or the walk leaves the current component (panic).

    The exploration measure is recomputed when the dyadic epoch of the
    explore count, the dyadic epoch of t or the leveled optimal set changes.
    """

    name = "ecoe"

    def __init__(self, schedule: Schedule | None = None, refine_kernels: bool = True):
        self.schedule = schedule or default_schedule()
        self.refine_kernels = refine_kernels

    def reset(self, seed, shape):
        super().reset(seed, shape)
        self.sched = ScheduleState(self.schedule, 0)
        self.stats = EcoeStats()
        self._choice = None
        self._explore_key = None
        self._explore_policy = None
        self._exploiting = False
        self._start = -1
        self._comp_states = set()
        self._plus = None
        self._first_exploit = False

    # ---- phase start
    def _exploration(self, mhat, params, lev_pairs) -> Policy:
        key = (params.epoch, max(self.t, 1).bit_length(), tuple(lev_pairs.tolist()))
        if key != self._explore_key:
            self.stats.lower_bound_solves += 1
            try:
                self._explore_policy = exploration_policy(mhat, params)
            except AvgMdpError:
                self.stats.fallbacks += 1
                self._explore_policy = Policy.uniform(mhat)
            self._explore_key = key
        return self._explore_policy

    def _start_phase(self, state: int) -> int:
        t = self.t
        self.stats.phases += 1
        self.last_phase = self.stats.phases
        params = self.sched.floored(t)
        mhat = self.est.mle()
        structure, self._choice = leveled_structure(mhat, params.eps_flat, self._choice)
        comp = int(structure.state_component[state])
        if comp < 0 or not structure.plus_recurrent[state]:
            self.stats.forced_explorations += 1
            return self._explore(state, mhat, params, structure, EXPLORE)
        if glr_exploration_test(self.est, t, self.sched, structure, self.refine_kernels, params):
            return self._explore(state, mhat, params, structure, EXPLORE)
        if square_trick_check(self.est.counts, structure.pairs, structure.components[comp]):
            return self._explore(state, mhat, params, structure, COEXPLORE)
        self._exploiting = True
        self._first_exploit = True
        self._start = state
        self._comp_states = set(structure.component_states[comp].tolist())
        self._plus = structure.plus
        return self._exploit(state)

    def _explore(self, state, mhat, params, structure, tag) -> int:
        minus = self._exploration(mhat, params, structure.pairs)
        self.sched.explore_count += 1
        if tag == COEXPLORE:
            self.stats.coexplore_steps += 1
        else:
            self.stats.explore_steps += 1
        self.last_tag = tag
        return self._sample(minus.probs, state)

    def _exploit(self, state) -> int:
        self.last_tag = EXPLOIT_START if self._first_exploit else EXPLOIT
        self._first_exploit = False
        self.stats.exploit_steps += 1
        return self._sample(self._plus, state)

    def act(self, state: int) -> int:
        if self._exploiting:
            return self._exploit(state)
        return self._start_phase(state)

    def observe(self, s, a, r, s2):
        super().observe(s, a, r, s2)
        if not self._exploiting:
            return
        if s2 not in self._comp_states:
            # the walk left the component: a transition the estimate did not predict
            self.stats.panics += 1
            self.last_tag = PANIC_START if self.last_tag == EXPLOIT_START else PANIC
            self._exploiting = False
        elif s2 == self._start:
            self.stats.regenerations += 1
            self._exploiting = False


LEARNERS = {"ecoe": Ecoe, "uniform": UniformRandom, "greedy": GreedyMLE}


def learner_from_config(cfg) -> Learner:
    """{"algo": "ecoe"|"uniform"|"greedy", "schedule": ..., "caps": {...}}."""
    if isinstance(cfg, str):
        cfg = {"algo": cfg}
    algo = cfg.get("algo")
    if algo not in LEARNERS:
        raise ValidationError(f"unknown learner {algo!r}")
    unknown = set(cfg) - {"algo", "schedule", "caps", "name"}
    if unknown:
        raise ValidationError(f"unknown learner keys {sorted(unknown)}")
    if algo == "ecoe":
        caps = cfg.get("caps") or {}
        bad = set(caps) - {"refine_kernels"}
        if bad:
            raise ValidationError(f"unknown caps {sorted(bad)}")
        return Ecoe(schedule_from_config(cfg.get("schedule", "default")), bool(caps.get("refine_kernels", True)))
    return LEARNERS[algo]()
