"""Seeded simulation of a learner in a model, regret accounting and
multi-seed experiments with CSV traces and a JSON summary.

Random streams: the master seed feeds ``numpy.random.SeedSequence``; its
first three spawned children drive rewards, transitions and the learner, in
that order, each through a Philox4x64 generator. Reward and transition
uniforms are drawn in one block of ``horizon`` doubles per stream, so a run
is reproducible from (model, learner config, seed, horizon, start state).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IllegalAction, ValidationError
from .learner import COEXPLORE, Learner, LearnerShape, learner_from_config
from .model import MdpModel, load_model
from .solver import solve_optimal

CSV_COLUMNS = ("t", "state", "action", "reward", "next_state", "phase", "class")


def streams(seed: int):
    """(rewards, transitions, learner) generators for a master seed."""
    ss = np.random.SeedSequence(int(seed))
    kids = ss.spawn(3)
    return tuple(np.random.Generator(np.random.Philox(k)) for k in kids[:2]), kids[2]


@dataclass
class Trace:
    states: np.ndarray
    actions: np.ndarray  # local action index
    pairs: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    phases: np.ndarray
    tags: list
    seed: int
    model_name: str
    config_hash: str
    stats: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return int(self.states.size)

    @property
    def cumulative_reward(self) -> float:
        return float(self.rewards.sum())

    def to_csv(self, path_or_buf) -> None:
        own = isinstance(path_or_buf, (str, Path))
        f = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for i in range(self.horizon):
                w.writerow((i + 1, int(self.states[i]), int(self.actions[i]), int(self.rewards[i]),
                            int(self.next_states[i]), int(self.phases[i]), self.tags[i]))
        finally:
            if own:
                f.close()

    def csv_bytes(self) -> bytes:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue().encode()


def config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def simulate(model: MdpModel, learner: Learner, horizon: int, seed: int, start_state: int = 0,
             learner_config=None) -> Trace:
    """Run ``learner`` for ``horizon`` steps from ``start_state``."""
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    if not 0 <= start_state < model.n_states:
        raise ValidationError(f"start state {start_state} out of range")
    (rng_r, rng_k), learner_seed = streams(seed)
    u_r = rng_r.random(horizon)
    u_k = rng_k.random(horizon)
    cum = np.cumsum(model.kernel, axis=1)
    cum[:, -1] = 1.0
    offsets = model.offsets
    reward = model.reward
    learner.reset(learner_seed, LearnerShape.of(model))
    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    pairs = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon, dtype=np.int8)
    nexts = np.empty(horizon, dtype=np.int64)
    phases = np.empty(horizon, dtype=np.int64)
    tags = [""] * horizon
    s = int(start_state)
    for i in range(horizon):
        a = learner.act(s)
        n_act = offsets[s + 1] - offsets[s]
        if not (isinstance(a, (int, np.integer)) and 0 <= a < n_act):
            raise IllegalAction(f"learner chose action {a!r} at state {s} on step {i + 1}", i + 1)
        p = offsets[s] + a
        r = 1 if u_r[i] < reward[p] else 0
        s2 = int(np.searchsorted(cum[p], u_k[i], side="right"))
        learner.observe(s, int(a), r, s2)
        states[i], actions[i], pairs[i], rewards[i], nexts[i] = s, a, p, r, s2
        phases[i] = learner.last_phase
        tags[i] = learner.last_tag
        s = s2
    stats = dict(vars(learner.stats)) if hasattr(learner, "stats") else {}
    return Trace(states, actions, pairs, rewards, nexts, phases, tags, int(seed), model.name,
                 config_hash(learner_config) if learner_config is not None else "", stats)


def horizon_grid(horizon: int) -> np.ndarray:
    """Powers of two up to the horizon, plus the horizon itself."""
    grid = [2**k for k in range(int(math.log2(horizon)) + 1) if 2**k <= horizon]
    if grid[-1] != horizon:
        grid.append(horizon)
    return np.array(grid, dtype=np.int64)


@dataclass(frozen=True)
class RegretReport:
    grid: np.ndarray
    empirical: np.ndarray  # T g* - sum of rewards, on the grid
    pseudo: np.ndarray  # sum of gaps of the played pairs, on the grid
    visits: np.ndarray  # final per-pair counts
    reference_k: float | None = None


def regret(trace: Trace, model: MdpModel, start_state: int = 0, sol=None, reference_k=None) -> RegretReport:
    """Empirical and pseudo-regret of a trace on the horizon grid.

    The optimal gain of a communicating model does not depend on the start
    state, which is kept in the signature for multichain extensions.
    """
    if sol is None:
        sol = solve_optimal(model, cross_check=False)
    grid = horizon_grid(trace.horizon)
    cum_r = np.cumsum(trace.rewards, dtype=float)
    cum_gap = np.cumsum(np.clip(sol.gaps, 0.0, None)[trace.pairs])
    emp = grid * float(sol.gain[start_state]) - cum_r[grid - 1]
    pseudo = cum_gap[grid - 1]
    visits = np.bincount(trace.pairs, minlength=model.n_pairs)
    return RegretReport(grid, emp, pseudo, visits, reference_k)


def travel_count(trace: Trace) -> int:
    """Number of maximal runs of consecutive co-exploration steps."""
    co = np.array([t == COEXPLORE for t in trace.tags], dtype=np.int8)
    return int(np.sum(np.diff(np.concatenate([[0], co])) == 1))


def panic_count(trace: Trace) -> int:
    return sum(1 for t in trace.tags if t.startswith("T!"))


def tail_slope(grid, values, frac: float = 0.5) -> float:
    """Mean of Reg(T)/ln T over the grid points in the last ``frac`` of log-time."""
    grid = np.asarray(grid, dtype=float)
    ln = np.log(grid)
    keep = (ln >= ln[-1] * (1 - frac)) & (grid > 1)
    return float(np.mean(np.asarray(values)[keep] / ln[keep]))


# --------------------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    learners: list
    horizon: int
    seeds: list
    start_state: int = 0
    out_dir: str = "runs"
    write_traces: bool = True

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        known = {"model", "learners", "horizon", "seeds", "start_state", "out_dir", "write_traces"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown experiment keys {sorted(unknown)}")
        try:
            model = str(d["model"])
            if base_dir is not None and not Path(model).is_absolute():
                model = str(base_dir / model)
            cfg = cls(model, list(d["learners"]), int(d["horizon"]), [int(s) for s in d["seeds"]],
                      int(d.get("start_state", 0)), str(d.get("out_dir", "runs")), bool(d.get("write_traces", True)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad experiment config: {exc}") from exc
        if cfg.horizon < 1 or not cfg.seeds or not cfg.learners:
            raise ValidationError("experiment needs horizon >= 1, seeds and learners")
        return cfg


def _learner_label(cfg) -> str:
    if isinstance(cfg, str):
        return cfg
    return str(cfg.get("name") or cfg.get("algo"))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, central=None) -> dict:
    """Run every (learner, seed) pair, write traces and return the summary.

    ``central`` optionally supplies (normalized measure, information value of
    the measure) for the visit-rate comparison; it is computed when omitted.
    """
    model = load_model(cfg.model) if isinstance(cfg.model, str) else cfg.model
    sol = solve_optimal(model, cross_check=False)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref_k, rate = _reference(model, central)
    summary = {"model": model.name, "horizon": cfg.horizon, "seeds": cfg.seeds, "start_state": cfg.start_state,
               "reference_K": ref_k, "learners": {}}
    for lcfg in cfg.learners:
        label = _learner_label(lcfg)
        learner_from_config(lcfg)  # validate before running

        def one(seed, lcfg=lcfg, label=label):
            t0 = time.perf_counter()
            tr = simulate(model, learner_from_config(lcfg), cfg.horizon, seed, cfg.start_state, lcfg)
            if cfg.write_traces:
                tr.to_csv(out / f"{model.name}_{label}_seed{seed}.csv")
            rep = regret(tr, model, cfg.start_state, sol, ref_k)
            return seed, tr, rep, time.perf_counter() - t0

        if jobs > 1:
            with ThreadPoolExecutor(jobs) as pool:
                results = list(pool.map(one, cfg.seeds))
        else:
            results = [one(s) for s in cfg.seeds]
        results.sort(key=lambda x: x[0])
        summary["learners"][label] = _aggregate(results, model, rate)
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def _reference(model, central):
    from .errors import AvgMdpError
    from .lowerbound import central_measure, information_value, vanilla_lower_bound

    try:
        k = vanilla_lower_bound(model).extrapolated
    except AvgMdpError:
        k = None
    if central is None:
        try:
            cm = central_measure(model)
            info = information_value(cm.measure, model)
            central = (cm.measure, info)
        except AvgMdpError:
            central = None
    rate = None
    if central is not None and central[1] > 0:
        rate = (np.asarray(central[0]) / central[1]).tolist()
    return k, rate


def _aggregate(results, model, rate) -> dict:
    grid = results[0][2].grid
    emp = np.array([r[2].empirical for r in results])
    pseudo = np.array([r[2].pseudo for r in results])
    n = len(results)
    se = lambda x: (x.std(axis=0, ddof=1) / math.sqrt(n)) if n > 1 else np.zeros(x.shape[1])
    visits = np.array([r[2].visits for r in results])
    ln_t = math.log(grid[-1])
    per_seed = []
    for seed, tr, rep, secs in results:
        per_seed.append({
            "seed": seed,
            "pseudo_regret": float(rep.pseudo[-1]),
            "empirical_regret": float(rep.empirical[-1]),
            "tail_pseudo_over_logT": tail_slope(grid, rep.pseudo),
            "travels": travel_count(tr),
            "panics": panic_count(tr),
            "visits": rep.visits.tolist(),
            "seconds": secs,
            "stats": tr.stats,
        })
    out = {
        "grid": grid.tolist(),
        "mean_pseudo_regret": pseudo.mean(axis=0).tolist(),
        "stderr_pseudo_regret": se(pseudo).tolist(),
        "mean_empirical_regret": emp.mean(axis=0).tolist(),
        "stderr_empirical_regret": se(emp).tolist(),
        "tail_pseudo_over_logT": tail_slope(grid, pseudo.mean(axis=0)),
        "mean_visits_over_logT": (visits.mean(axis=0) / ln_t).tolist(),
        "predicted_visits_over_logT": rate,
        "travels": [p["travels"] for p in per_seed],
        "panics": [p["panics"] for p in per_seed],
        "runs": per_seed,
    }
    return out
