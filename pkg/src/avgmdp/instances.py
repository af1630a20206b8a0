"""Small reference models and random instance generators."""

from __future__ import annotations

import numpy as np

from .model import MdpModel
from .solver import check_communicating


def _two_state(name, r_go1, r_loop1, r_go2, r_loop2, labels=("go", "loop", "go", "loop"), known=True):
    # state 0: (go -> 1, loop), state 1: (go -> 0, loop)
    kernel = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    kernel[1] = [1.0, 0.0]
    kernel[3] = [0.0, 1.0]
    return MdpModel(
        actions=((labels[0], labels[1]), (labels[2], labels[3])),
        kernel=kernel,
        reward=[r_go1, r_loop1, r_go2, r_loop2],
        known=[known] * 4,
        name=name,
        state_labels=("1", "2"),
    )


def discontinuous_gaps(theta: float, known: bool = True) -> MdpModel:
    """Two states with a zero-reward cycle and loops worth 0.5 + theta and 0.5.

    Pair order: (1 -> 2), (loop at 1), (2 -> 1), (loop at 2).
    """
    return _two_state(f"discontinuous_gaps_{theta:g}", 0.0, 0.5 + theta, 0.0, 0.5, known=known)


def coexploration(theta: float, known: bool = True) -> MdpModel:
    """Same two-loop structure, used to exercise travel between optimal loops."""
    model = discontinuous_gaps(theta, known)
    return model.replace(name=f"coexploration_{theta:g}")


def leveling_models(known: bool = True) -> tuple[MdpModel, MdpModel]:
    """A model and a perturbation of it that breaks the tie between two loops."""
    m = _two_state("leveling", 0.6, 0.5, 0.1, 0.5, known=known)
    m2 = _two_state("leveling_perturbed", 0.59, 0.52, 0.12, 0.49, known=known)
    return m, m2


def regret_discontinuity(theta: float = 0.0, known: bool = True) -> MdpModel:
    """State 1: star (-> 2) and sect (loop, 0.1); state 2: dagger (-> 1) and ddagger (loop, 0.5).

    For theta > 0 the rewards of star and dagger become 0.5 - theta.
    """
    name = "regret_discontinuity" if theta == 0 else f"regret_discontinuity_{theta:g}"
    return _two_state(name, 0.5 - theta, 0.1, 0.5 - theta, 0.5, labels=("star", "sect", "dagger", "ddagger"), known=known)


def two_cycle(reward=(0.5, 0.5)) -> MdpModel:
    return MdpModel(
        actions=(("go",), ("go",)),
        kernel=[[0.0, 1.0], [1.0, 0.0]],
        reward=list(reward),
        known=[True, True],
        name="two_cycle",
        state_labels=("1", "2"),
    )


def single_state(reward: float = 0.7) -> MdpModel:
    return MdpModel(actions=(("stay",),), kernel=[[1.0]], reward=[reward], known=[True], name="single")


def random_model(
    rng: np.random.Generator,
    n_states: int,
    n_actions,
    density: float = 0.6,
    known: bool = True,
    deterministic_fraction: float = 0.0,
    communicating: bool = True,
    reward_range=(0.0, 1.0),
    max_tries: int = 1000,
) -> MdpModel:
    """Random model; with ``communicating`` it redraws until the support is."""
    for _ in range(max_tries):
        counts = [int(rng.integers(1, n_actions + 1)) if isinstance(n_actions, int) else n_actions[s] for s in range(n_states)]
        rows = []
        for s in range(n_states):
            for _a in range(counts[s]):
                row = np.zeros(n_states)
                if rng.random() < deterministic_fraction:
                    row[rng.integers(n_states)] = 1.0
                else:
                    mask = rng.random(n_states) < density
                    if not mask.any():
                        mask[rng.integers(n_states)] = True
                    row[mask] = rng.dirichlet(np.ones(mask.sum()))
                    row[mask] = np.maximum(row[mask], 1e-3)
                    row /= row.sum()
                rows.append(row)
        lo, hi = reward_range
        reward = rng.uniform(lo, hi, size=len(rows))
        model = MdpModel(
            actions=tuple(tuple(f"a{a}" for a in range(c)) for c in counts),
            kernel=np.array(rows),
            reward=reward,
            known=[known] * len(rows),
            name=f"random_{n_states}",
        )
        if not communicating or check_communicating(model)[0]:
            return model
    raise RuntimeError("could not draw a communicating model")


def perturb(
    rng: np.random.Generator, model: MdpModel, size: float, keep_support: bool = True, reward_share: float = 0.5
) -> MdpModel:
    """Model at distance at most ``size`` (max over pairs of |dr| + |dk|_1), same supports."""
    r_budget = size * reward_share
    k_budget = size - r_budget
    reward = np.clip(model.reward + rng.uniform(-r_budget, r_budget, size=model.n_pairs), 0.0, 1.0)
    kernel = model.kernel.copy()
    for p in range(model.n_pairs):
        supp = np.flatnonzero(kernel[p] > 0)
        if supp.size < 2:
            continue
        d = rng.normal(size=supp.size)
        d -= d.mean()
        d *= 0.5 * k_budget * rng.random() / max(np.abs(d).sum() / 2, 1e-300) / 2
        row = kernel[p, supp] + d
        # stay strictly positive to keep the support
        lo = 0.5 * kernel[p, supp].min()
        if row.min() < lo:
            t = (kernel[p, supp].min() - lo) / max(kernel[p, supp].min() - row.min(), 1e-300)
            row = kernel[p, supp] + t * d
        kernel[p, supp] = row
        kernel[p] /= kernel[p].sum()
    return model.replace(kernel=kernel, reward=reward, name=model.name + "_perturbed")
