"""Flat finite DEC-POMDP data model.

The joint process is described by dense tables:

* ``transition[s][a_flat][s']`` - joint state transition probabilities,
  where ``a_flat`` indexes joint-action vectors in mixed-radix order
  (agent 0 is the most significant digit),
* ``observation_fn[k][a][s'][o']`` - per-agent observation probabilities
  conditioned on the agent's own action and the next joint state,
* ``reward[s][a_flat]`` - immediate reward per step.

All agents share one action space and one observation space.  Tables are
stored in double precision and are never silently renormalized; `validate`
reports violations instead of repairing them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from ._io import FileFormatError, atomic_write_json, read_json

PROB_ATOL = 1e-9

__all__ = [
    "PROB_ATOL",
    "DecPomdp",
    "JointActionIndex",
    "ValidationReport",
    "decode_mixed_radix",
    "digit_table",
    "encode_mixed_radix",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "obs_prob",
    "reward",
    "save_model",
    "transition_prob",
    "validate",
]


def encode_mixed_radix(digits: Sequence[int], radices: Sequence[int]) -> int:
    """Row-major mixed-radix encoding; ``digits[0]`` is the most significant."""
    if len(digits) != len(radices):
        raise ValueError(f"got {len(digits)} digits for {len(radices)} radices")
    flat = 0
    for d, r in zip(digits, radices):
        if not 0 <= d < r:
            raise ValueError(f"digit {d} out of range for radix {r}")
        flat = flat * r + d
    return flat


def decode_mixed_radix(flat: int, radices: Sequence[int]) -> tuple[int, ...]:
    """Inverse of `encode_mixed_radix`."""
    total = int(np.prod(radices)) if radices else 1
    if not 0 <= flat < total:
        raise ValueError(f"flat index {flat} out of range for radices {tuple(radices)}")
    digits = []
    for r in reversed(radices):
        digits.append(flat % r)
        flat //= r
    return tuple(reversed(digits))


@lru_cache(maxsize=None)
def _digit_table(radices: tuple[int, ...]) -> np.ndarray:
    total = int(np.prod(radices)) if radices else 1
    table = np.empty((total, len(radices)), dtype=np.int64)
    for i in range(total):
        table[i] = decode_mixed_radix(i, radices)
    table.setflags(write=False)
    return table


def digit_table(radices: Sequence[int]) -> np.ndarray:
    """All joint indices decoded at once: shape ``(prod(radices), len(radices))``."""
    return _digit_table(tuple(int(r) for r in radices))


@dataclass(frozen=True)
class JointActionIndex:
    """A joint-action vector together with its flat mixed-radix encoding."""

    components: tuple[int, ...]
    flat: int

    @classmethod
    def from_components(cls, components: Iterable[int], num_actions: int) -> "JointActionIndex":
        comp = tuple(int(c) for c in components)
        return cls(comp, encode_mixed_radix(comp, (num_actions,) * len(comp)))

    @classmethod
    def from_flat(cls, flat: int, num_actions: int, num_agents: int) -> "JointActionIndex":
        return cls(decode_mixed_radix(flat, (num_actions,) * num_agents), int(flat))


def _as_table(value, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(value, dtype=np.float64))
    arr.setflags(write=False)
    return arr


@dataclass(eq=False)
class DecPomdp:
    """Immutable flat DEC-POMDP; equality is structural over the tables.

    ``meta`` carries free-form provenance and is excluded from equality.
    """

    num_agents: int
    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: np.ndarray
    observation_fn: np.ndarray
    reward: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = tuple(self.states)
        self.actions = tuple(self.actions)
        self.observations = tuple(self.observations)
        self.transition = _as_table(self.transition, "transition")
        self.observation_fn = _as_table(self.observation_fn, "observation_fn")
        self.reward = _as_table(self.reward, "reward")

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_observations(self) -> int:
        return len(self.observations)

    @property
    def num_joint_actions(self) -> int:
        return self.num_actions**self.num_agents

    def joint_action_digits(self) -> np.ndarray:
        return digit_table((self.num_actions,) * self.num_agents)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecPomdp):
            return NotImplemented
        return (
            self.num_agents == other.num_agents
            and self.states == other.states
            and self.actions == other.actions
            and self.observations == other.observations
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.observation_fn, other.observation_fn)
            and np.array_equal(self.reward, other.reward)
        )

    __hash__ = None


@dataclass
class ValidationReport:
    """Outcome of `validate`; empty ``violations`` means the model is valid."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "model valid"
        return "\n".join(self.violations)


def validate(model: DecPomdp) -> ValidationReport:
    """Check every model invariant; reports violations, never raises."""
    report = ValidationReport()
    add = report.violations.append

    K = model.num_agents
    S, A, O = model.num_states, model.num_actions, model.num_observations
    AK = A**K
    if K < 1:
        add(f"num_agents must be >= 1, got {K}")
        return report

    if model.transition.shape != (S, AK, S):
        add(f"transition shape {model.transition.shape} != {(S, AK, S)}")
    if model.observation_fn.shape != (K, A, S, O):
        add(f"observation shape {model.observation_fn.shape} != {(K, A, S, O)}")
    if model.reward.shape != (S, AK):
        add(f"reward shape {model.reward.shape} != {(S, AK)}")
    if not report.ok:
        return report  # shape errors make the entry checks meaningless

    W, V = model.transition, model.observation_fn
    if not np.isfinite(W).all():
        add("transition contains non-finite entries")
    if not np.isfinite(V).all():
        add("observation contains non-finite entries")
    if not np.isfinite(model.reward).all():
        add("reward contains non-finite entries")
    if report.ok:
        bad = np.argwhere((W < -PROB_ATOL) | (W > 1 + PROB_ATOL))
        for s, a, s2 in bad[:20]:
            add(f"transition[{s}][{a}][{s2}] = {W[s, a, s2]!r} outside [0, 1]")
        bad = np.argwhere((V < -PROB_ATOL) | (V > 1 + PROB_ATOL))
        for k, a, s2, o in bad[:20]:
            add(f"observation[{k}][{a}][{s2}][{o}] = {V[k, a, s2, o]!r} outside [0, 1]")

        rows = W.sum(axis=2)
        for s, a in np.argwhere(np.abs(rows - 1.0) > PROB_ATOL):
            add(f"transition row (s={s}, a_flat={a}) sums to {rows[s, a]!r}, not 1")
        rows = V.sum(axis=3)
        for k, a, s2 in np.argwhere(np.abs(rows - 1.0) > PROB_ATOL):
            add(f"observation row (k={k}, a={a}, s'={s2}) sums to {rows[k, a, s2]!r}, not 1")
    return report


def _check_index(value: int, size: int, axis: str) -> int:
    value = int(value)
    if not 0 <= value < size:
        raise IndexError(f"{axis} index {value} out of range [0, {size})")
    return value


def _flat_action(model: DecPomdp, joint_action) -> int:
    if isinstance(joint_action, JointActionIndex):
        return _check_index(joint_action.flat, model.num_joint_actions, "joint action")
    if np.isscalar(joint_action):
        return _check_index(joint_action, model.num_joint_actions, "joint action")
    comp = [_check_index(a, model.num_actions, "action") for a in joint_action]
    if len(comp) != model.num_agents:
        raise IndexError(f"joint action has {len(comp)} components, expected {model.num_agents}")
    return encode_mixed_radix(comp, (model.num_actions,) * model.num_agents)


def transition_prob(model: DecPomdp, s: int, joint_action, s_next: int) -> float:
    """W(s, a, s'); ``joint_action`` may be flat or a per-agent vector."""
    s = _check_index(s, model.num_states, "state")
    s_next = _check_index(s_next, model.num_states, "next state")
    return float(model.transition[s, _flat_action(model, joint_action), s_next])


def obs_prob(model: DecPomdp, k: int, a: int, s_next: int, o_next: int) -> float:
    """V^(k)(a, s', o'): probability agent k observes o' after acting a into s'."""
    k = _check_index(k, model.num_agents, "agent")
    a = _check_index(a, model.num_actions, "action")
    s_next = _check_index(s_next, model.num_states, "next state")
    o_next = _check_index(o_next, model.num_observations, "observation")
    return float(model.observation_fn[k, a, s_next, o_next])


def reward(model: DecPomdp, s: int, joint_action) -> float:
    """r(s, a) table lookup."""
    s = _check_index(s, model.num_states, "state")
    return float(model.reward[s, _flat_action(model, joint_action)])


def model_to_dict(model: DecPomdp) -> dict:
    return {
        "agents": model.num_agents,
        "states": list(model.states),
        "actions": list(model.actions),
        "observations": list(model.observations),
        "transition": model.transition.tolist(),
        "observation": model.observation_fn.tolist(),
        "reward": model.reward.tolist(),
        "meta": model.meta,
    }


def model_from_dict(payload: dict) -> DecPomdp:
    try:
        return DecPomdp(
            num_agents=int(payload["agents"]),
            states=tuple(payload["states"]),
            actions=tuple(payload["actions"]),
            observations=tuple(payload["observations"]),
            transition=payload["transition"],
            observation_fn=payload["observation"],
            reward=payload["reward"],
            meta=dict(payload.get("meta", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"malformed model document: {exc}") from exc


def save_model(model: DecPomdp, path: str) -> None:
    atomic_write_json(path, model_to_dict(model))


def load_model(path: str) -> DecPomdp:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise FileFormatError(f"{path}: expected a JSON object at top level")
    return model_from_dict(payload)
