"""Tabular MDP and policy containers plus the JSON model format.

Pairs are indexed contiguously state by state: the actions of state ``s``
occupy ``range(offsets[s], offsets[s + 1])``. Every array-valued quantity on
pairs (rewards, gaps, measures, policies) uses this indexing.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidModel, InvalidPolicy, ResourceLimit

KNOWN = "known"
FREE = "free"

ROW_TOL = 1e-12
RENORMALIZE_TOL = 1e-9
ENUM_CAP = 20000


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Finite MDP with Bernoulli rewards.

    ``kernel`` has shape (n_pairs, n_states); ``reward`` and ``known`` have
    shape (n_pairs,). ``known[p]`` is True when the kernel of pair ``p`` is
    known to the learner and False when it ranges over the simplex.
    ``bounded_rewards=False`` is reserved for leveled models, whose rewards
    may leave [0, 1].
    """

    actions: tuple
    kernel: np.ndarray
    reward: np.ndarray
    known: np.ndarray
    name: str = "mdp"
    state_labels: tuple = ()
    bounded_rewards: bool = True
    offsets: np.ndarray = field(init=False, repr=False)
    pair_state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        actions = tuple(tuple(str(a) for a in acts) for acts in self.actions)
        object.__setattr__(self, "actions", actions)
        n_states = len(actions)
        if n_states == 0:
            raise InvalidModel("model has no states")
        if any(len(acts) == 0 for acts in actions):
            raise InvalidModel("every state needs at least one action")
        labels = tuple(str(s) for s in self.state_labels) or tuple(str(s) for s in range(n_states))
        if len(labels) != n_states:
            raise InvalidModel("state_labels does not match the number of states")
        object.__setattr__(self, "state_labels", labels)
        counts = [len(acts) for acts in actions]
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        n_pairs = int(offsets[-1])
        kernel = np.array(self.kernel, dtype=float)
        reward = np.array(self.reward, dtype=float)
        known = np.array(self.known, dtype=bool)
        if kernel.shape != (n_pairs, n_states):
            raise InvalidModel(f"kernel shape {kernel.shape} != ({n_pairs}, {n_states})")
        if reward.shape != (n_pairs,) or known.shape != (n_pairs,):
            raise InvalidModel("reward/known must have one entry per pair")
        if not np.all(np.isfinite(kernel)) or np.any(kernel < 0):
            raise InvalidModel("kernel entries must be finite and nonnegative")
        if np.any(np.abs(kernel.sum(axis=1) - 1.0) > ROW_TOL):
            raise InvalidModel("kernel rows must sum to 1")
        if not np.all(np.isfinite(reward)):
            raise InvalidModel("rewards must be finite")
        if self.bounded_rewards and (np.any(reward < 0) or np.any(reward > 1)):
            raise InvalidModel("reward means must lie in [0, 1]")
        object.__setattr__(self, "kernel", _frozen(kernel))
        object.__setattr__(self, "reward", _frozen(reward))
        object.__setattr__(self, "known", _frozen(known, bool))
        object.__setattr__(self, "offsets", _frozen(offsets, np.int64))
        object.__setattr__(self, "pair_state", _frozen(np.repeat(np.arange(n_states), counts), np.int64))

    @property
    def n_states(self) -> int:
        return len(self.actions)

    @property
    def n_pairs(self) -> int:
        return int(self.offsets[-1])

    def pairs_of(self, s: int) -> range:
        return range(int(self.offsets[s]), int(self.offsets[s + 1]))

    def n_actions(self, s: int) -> int:
        return int(self.offsets[s + 1] - self.offsets[s])

    def pair(self, s: int, a: int) -> int:
        if not 0 <= a < self.n_actions(s):
            raise IndexError(f"state {s} has no action {a}")
        return int(self.offsets[s]) + a

    def pair_label(self, p: int) -> str:
        s = int(self.pair_state[p])
        return f"{self.state_labels[s]},{self.actions[s][p - int(self.offsets[s])]}"

    def pair_labels(self) -> list[str]:
        return [self.pair_label(p) for p in range(self.n_pairs)]

    def replace(self, *, kernel=None, reward=None, known=None, name=None, bounded_rewards=None) -> "MdpModel":
        return MdpModel(
            actions=self.actions,
            kernel=self.kernel if kernel is None else kernel,
            reward=self.reward if reward is None else reward,
            known=self.known if known is None else known,
            name=self.name if name is None else name,
            state_labels=self.state_labels,
            bounded_rewards=self.bounded_rewards if bounded_rewards is None else bounded_rewards,
        )

    def with_reward(self, reward, name=None) -> "MdpModel":
        """Copy with new rewards, skipping the kernel validation."""
        reward = np.array(reward, dtype=float)
        if reward.shape != (self.n_pairs,) or not np.all(np.isfinite(reward)):
            raise InvalidModel("rewards must be finite, one per pair")
        if self.bounded_rewards and (np.any(reward < 0) or np.any(reward > 1)):
            raise InvalidModel("reward means must lie in [0, 1]")
        out = object.__new__(MdpModel)
        out.__dict__.update(self.__dict__)
        object.__setattr__(out, "reward", _frozen(reward))
        if name is not None:
            object.__setattr__(out, "name", name)
        return out

    def state_mass(self, mu: np.ndarray) -> np.ndarray:
        """Sum a pair vector over the actions of each state."""
        return np.add.reduceat(np.asarray(mu, dtype=float), self.offsets[:-1])

    def flow_matrix(self) -> np.ndarray:
        """Matrix F with F @ mu = outflow - inflow per state."""
        f = -self.kernel.T.copy()
        f[self.pair_state, np.arange(self.n_pairs)] += 1.0
        return f

    def n_deterministic_policies(self) -> int:
        return int(np.prod([self.n_actions(s) for s in range(self.n_states)], dtype=object))

    def deterministic_policies(self, cap: int = ENUM_CAP):
        """Iterate deterministic policies as arrays of chosen pair indices."""
        n = self.n_deterministic_policies()
        if n > cap:
            raise ResourceLimit(f"{n} deterministic policies exceed the cap {cap}")
        for choice in itertools.product(*(self.pairs_of(s) for s in range(self.n_states))):
            yield np.array(choice, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary policy stored as per-pair action probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    @classmethod
    def deterministic(cls, model: MdpModel, choice) -> "Policy":
        """Build from one pair index per state."""
        choice = np.asarray(choice, dtype=np.int64)
        if choice.shape != (model.n_states,):
            raise InvalidPolicy("need exactly one pair per state")
        if np.any(model.pair_state[choice] != np.arange(model.n_states)):
            raise InvalidPolicy("chosen pair does not belong to its state")
        probs = np.zeros(model.n_pairs)
        probs[choice] = 1.0
        return cls(probs)

    @classmethod
    def from_actions(cls, model: MdpModel, actions) -> "Policy":
        """Build from one local action index per state."""
        return cls.deterministic(model, [model.pair(s, a) for s, a in enumerate(actions)])

    @classmethod
    def uniform(cls, model: MdpModel) -> "Policy":
        counts = np.diff(model.offsets)
        return cls(1.0 / counts[model.pair_state])

    @classmethod
    def from_probs(cls, model: MdpModel, probs) -> "Policy":
        pol = cls(np.asarray(probs, dtype=float))
        pol.check(model)
        return pol

    def check(self, model: MdpModel) -> None:
        if self.probs.shape != (model.n_pairs,):
            raise InvalidPolicy(f"policy has {self.probs.shape} entries, model has {model.n_pairs} pairs")
        if np.any(self.probs < 0):
            raise InvalidPolicy("negative action probability")
        if np.any(np.abs(model.state_mass(self.probs) - 1.0) > 1e-9):
            raise InvalidPolicy("action probabilities must sum to 1 at every state")

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    def fully_randomized(self) -> bool:
        return bool(np.all(self.probs > 0))

    def chain(self, model: MdpModel) -> tuple[np.ndarray, np.ndarray]:
        """Transition matrix and reward vector of the induced Markov chain."""
        w = self.probs
        p = np.zeros((model.n_states, model.n_states))
        np.add.at(p, model.pair_state, w[:, None] * model.kernel)
        r = np.bincount(model.pair_state, weights=w * model.reward, minlength=model.n_states)
        return p, r

    def choice(self, model: MdpModel) -> np.ndarray:
        """Pair index per state for a deterministic policy."""
        if not self.is_deterministic():
            raise InvalidPolicy("policy is randomized")
        return np.flatnonzero(self.probs)[np.argsort(model.pair_state[np.flatnonzero(self.probs)])]


def deterministic_chain(model: MdpModel, choice: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return model.kernel[choice], model.reward[choice]


# --------------------------------------------------------------------------- JSON


def _parse_prob(x) -> float:
    return float(x) if not isinstance(x, str) else float(x.strip())


def model_from_dict(d: dict) -> MdpModel:
    try:
        states = [str(s) for s in d["states"]]
        actions = [[str(a) for a in d["actions"][s]] for s in states]
        index = {s: i for i, s in enumerate(states)}
        rows, rewards, known = [], [], []
        for s in states:
            for a in actions[index[s]]:
                key = f"{s},{a}"
                row = np.array([_parse_prob(x) for x in d["kernel"][key]], dtype=float)
                if row.shape != (len(states),):
                    raise InvalidModel(f"kernel row {key!r} has wrong length")
                if np.any(row < 0) or not np.all(np.isfinite(row)):
                    raise InvalidModel(f"kernel row {key!r} has negative or non-finite entries")
                total = row.sum()
                if abs(total - 1.0) > RENORMALIZE_TOL:
                    raise InvalidModel(f"kernel row {key!r} sums to {total!r}")
                rows.append(row / total)
                rewards.append(_parse_prob(d["reward_mean"][key]))
                space = d.get("kernel_space", {}).get(key, KNOWN)
                if space not in (KNOWN, FREE):
                    raise InvalidModel(f"unknown kernel_space {space!r} for {key!r}")
                known.append(space == KNOWN)
    except (KeyError, TypeError) as exc:
        raise InvalidModel(f"malformed model: missing or bad field {exc}") from exc
    return MdpModel(
        actions=actions,
        kernel=np.array(rows),
        reward=np.array(rewards),
        known=np.array(known),
        name=str(d.get("name", "mdp")),
        state_labels=states,
    )


def model_to_dict(model: MdpModel) -> dict:
    labels = model.pair_labels()
    return {
        "name": model.name,
        "states": list(model.state_labels),
        "actions": {model.state_labels[s]: list(model.actions[s]) for s in range(model.n_states)},
        "kernel": {labels[p]: [float(x) for x in model.kernel[p]] for p in range(model.n_pairs)},
        "reward_mean": {labels[p]: float(model.reward[p]) for p in range(model.n_pairs)},
        "kernel_space": {labels[p]: KNOWN if model.known[p] else FREE for p in range(model.n_pairs)},
    }


def load_model(path) -> MdpModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidModel(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(data)


def save_model(model: MdpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def measure_to_dict(model: MdpModel, mu) -> dict:
    return {label: float(x) for label, x in zip(model.pair_labels(), mu)}


def measure_from_dict(model: MdpModel, d: dict) -> np.ndarray:
    labels = model.pair_labels()
    unknown = set(d) - set(labels)
    if unknown:
        raise InvalidModel(f"measure mentions unknown pairs {sorted(unknown)}")
    return np.array([float(d.get(label, 0.0)) for label in labels])
