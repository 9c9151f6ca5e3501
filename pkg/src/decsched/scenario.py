"""Compile a sensor/honeypot network description into a flat DEC-POMDP.

Each of the K devices is either a host-based sensor ("hids") or a decoy
("honeypot").  A device's local state is a pair (security condition,
consumption level): {secure, compromised} x {low, medium, high}, so the
joint model has 6^K states.  The shared action space is {sleep, monitor,
escalate}; "escalate" stands for prevention on a sensor and deep analysis
on a honeypot.  The consumption level of the next state is forced by the
chosen action (sleep->low, monitor->medium, escalate->high).

Security dynamics per step:

* a secure sensor host is attacked with probability
  ``attack_prob * diversion_factor**h`` where ``h`` counts honeypots whose
  action is monitor or escalate; an attack on an actively watching sensor
  (monitor or escalate) is caught with probability ``detect_prob`` and then
  does not compromise the host,
* a secure honeypot becomes engaged (its "compromised" reading) with
  probability ``attack_prob`` whenever it is active; a sleeping honeypot
  emulates nothing and attracts nothing,
* a compromised/engaged device returns to secure with probability
  ``recover_prob`` when escalating, and stays put otherwise.

Observations are binary {secure, compromised}.  While a device is active
its channel reports "compromised" on a secure host with probability
``fp_rate`` and "secure" on a compromised host with probability
``fn_rate``; a sleeping device reads an uninformative 50/50 channel.

None of the numeric defaults below come from measurement; they are
configurable placeholders.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import FileFormatError, atomic_write_json, read_json
from .model import DecPomdp, digit_table

X_LABELS = ("secure", "compromised")
Y_LABELS = ("low", "medium", "high")
ACTIONS = ("sleep", "monitor", "escalate")
OBSERVATIONS = ("secure", "compromised")

SLEEP, MONITOR, ESCALATE = 0, 1, 2
SECURE, COMPROMISED = 0, 1

__all__ = [
    "ACTIONS",
    "OBSERVATIONS",
    "X_LABELS",
    "Y_LABELS",
    "ConfigurationError",
    "DeviceSpec",
    "RewardWeights",
    "ScenarioConfig",
    "compile",
    "default_config",
    "load_config",
    "local_reward",
    "save_config",
    "state_label",
]


class ConfigurationError(ValueError):
    """A scenario field violates its invariant; the message names the field."""


@dataclass(frozen=True)
class RewardWeights:
    detect_reward: float = 10.0
    miss_penalty: float = -10.0
    false_escalation_penalty: float = -5.0
    monitor_cost: float = -1.0
    escalate_cost: float = -2.0


@dataclass(frozen=True)
class DeviceSpec:
    kind: str  # "hids" or "honeypot"
    fp_rate: float = 0.05
    fn_rate: float = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    devices: tuple[DeviceSpec, ...]
    attack_prob: float = 0.1
    diversion_factor: float = 0.6
    detect_prob: float = 0.8
    recover_prob: float = 0.9
    reward_weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    @property
    def num_honeypots(self) -> int:
        return sum(1 for d in self.devices if d.kind == "honeypot")


def _check_prob(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")


def check_config(config: ScenarioConfig) -> None:
    """Raise `ConfigurationError` naming the first violated field."""
    if config.num_devices < 1:
        raise ConfigurationError("devices must contain at least one DeviceSpec")
    for i, dev in enumerate(config.devices):
        if dev.kind not in ("hids", "honeypot"):
            raise ConfigurationError(f"devices[{i}].kind must be 'hids' or 'honeypot', got {dev.kind!r}")
        _check_prob(dev.fp_rate, f"devices[{i}].fp_rate")
        _check_prob(dev.fn_rate, f"devices[{i}].fn_rate")
    _check_prob(config.attack_prob, "attack_prob")
    _check_prob(config.diversion_factor, "diversion_factor")
    _check_prob(config.detect_prob, "detect_prob")
    _check_prob(config.recover_prob, "recover_prob")
    w = config.reward_weights
    if not w.detect_reward > 0:
        raise ConfigurationError(f"reward_weights.detect_reward must be > 0, got {w.detect_reward}")
    for name in ("miss_penalty", "false_escalation_penalty", "monitor_cost", "escalate_cost"):
        if getattr(w, name) > 0:
            raise ConfigurationError(f"reward_weights.{name} must be <= 0, got {getattr(w, name)}")


def local_reward(spec: DeviceSpec, x, a, weights: RewardWeights) -> float:
    """Per-device immediate reward as a function of (security state, action).

    Sensors and honeypots share the mapping: catching an engaged attacker
    during escalation pays like a successful detection.  A compromised
    device that is not escalating is charged the miss penalty every step
    it stays undetected.  ``x`` and ``a`` accept labels or indices.
    """
    x = X_LABELS.index(x) if isinstance(x, str) else int(x)
    a = ACTIONS.index(a) if isinstance(a, str) else int(a)
    if x not in (SECURE, COMPROMISED):
        raise ValueError(f"unknown security state {x}")
    if a not in (SLEEP, MONITOR, ESCALATE):
        raise ValueError(f"unknown action {a}")
    if x == SECURE:
        if a == SLEEP:
            return 0.0
        if a == MONITOR:
            return weights.monitor_cost
        return weights.false_escalation_penalty + weights.escalate_cost
    if a == SLEEP:
        return weights.miss_penalty
    if a == MONITOR:
        return weights.miss_penalty + weights.monitor_cost
    return weights.detect_reward + weights.escalate_cost


def state_label(digits) -> str:
    return "|".join(f"{X_LABELS[d // 3]}:{Y_LABELS[d % 3]}" for d in digits)


def _x_step(dev: DeviceSpec, x: int, a: int, active_honeypots: int, cfg: ScenarioConfig) -> float:
    """Probability the device's next security state is ``compromised``."""
    active = a in (MONITOR, ESCALATE)
    if x == SECURE:
        if dev.kind == "honeypot":
            return cfg.attack_prob if active else 0.0
        p = cfg.attack_prob * cfg.diversion_factor**active_honeypots
        if active:
            p *= 1.0 - cfg.detect_prob
        return p
    return 1.0 - cfg.recover_prob if a == ESCALATE else 1.0


def compile(config: ScenarioConfig) -> DecPomdp:
    """Build the flat joint model; see the module docstring for semantics."""
    check_config(config)
    K = config.num_devices
    S = 6**K
    AK = 3**K
    s_dig = digit_table((6,) * K)
    a_dig = digit_table((3,) * K)
    honeypot = np.array([d.kind == "honeypot" for d in config.devices])

    states = tuple(state_label(s_dig[s]) for s in range(S))

    # Local 6x6 transition matrices per (device, action, active honeypot count),
    # then each joint row is their Kronecker product (device 0 most significant).
    local = np.zeros((K, 3, K + 1, 6, 6))
    for k, dev in enumerate(config.devices):
        for a in range(3):
            y_next = a  # sleep->low, monitor->medium, escalate->high
            for h in range(K + 1):
                for x in range(2):
                    p_comp = _x_step(dev, x, a, h, config)
                    for y in range(3):
                        local[k, a, h, x * 3 + y, COMPROMISED * 3 + y_next] = p_comp
                        local[k, a, h, x * 3 + y, SECURE * 3 + y_next] = 1.0 - p_comp

    W = np.zeros((S, AK, S))
    for a_flat in range(AK):
        acts = a_dig[a_flat]
        h = int(np.count_nonzero(honeypot & (acts != SLEEP)))
        block = local[0, acts[0], h]
        for k in range(1, K):
            block = np.kron(block, local[k, acts[k], h])
        W[:, a_flat, :] = block

    # Observation channels: rows indexed by the device's own next security
    # state; entries for the FP/FN cells are assigned, not derived.
    V = np.empty((K, 3, S, 2))
    x_next = s_dig[:, :] // 3  # (S, K) security digit of each device
    for k, dev in enumerate(config.devices):
        channel = np.empty((3, 2, 2))
        channel[SLEEP] = 0.5
        for a in (MONITOR, ESCALATE):
            channel[a, SECURE] = (1.0 - dev.fp_rate, dev.fp_rate)
            channel[a, COMPROMISED] = (dev.fn_rate, 1.0 - dev.fn_rate)
        V[k] = channel[:, x_next[:, k], :]

    # Additive reward: accumulated device by device in index order so that
    # an independent left-to-right re-summation reproduces it bit for bit.
    table = np.empty((K, 2, 3))
    for k, dev in enumerate(config.devices):
        for x in range(2):
            for a in range(3):
                table[k, x, a] = local_reward(dev, x, a, config.reward_weights)
    R = np.zeros((S, AK))
    for k in range(K):
        R = R + table[k][np.ix_(x_next[:, k], a_dig[:, k])]

    meta = {
        "generator": "decsched.scenario",
        "device_kinds": [d.kind for d in config.devices],
        "initial_state": 0,  # every device at secure:low
        "scenario": config_to_dict(config),
    }
    return DecPomdp(
        num_agents=K,
        states=states,
        actions=ACTIONS,
        observations=OBSERVATIONS,
        transition=W,
        observation_fn=V,
        reward=R,
        meta=meta,
    )


def default_config(num_hids: int = 1, num_honeypots: int = 1, **overrides) -> ScenarioConfig:
    devices = tuple(DeviceSpec(kind="hids") for _ in range(num_hids)) + tuple(
        DeviceSpec(kind="honeypot") for _ in range(num_honeypots)
    )
    return ScenarioConfig(devices=devices, **overrides)


def config_to_dict(config: ScenarioConfig) -> dict:
    return {
        "devices": [asdict(d) for d in config.devices],
        "attack_prob": config.attack_prob,
        "diversion_factor": config.diversion_factor,
        "detect_prob": config.detect_prob,
        "recover_prob": config.recover_prob,
        "reward_weights": asdict(config.reward_weights),
    }


def config_from_dict(payload: dict) -> ScenarioConfig:
    try:
        devices = tuple(DeviceSpec(**d) for d in payload["devices"])
        weights = RewardWeights(**payload.get("reward_weights", {}))
        return ScenarioConfig(
            devices=devices,
            attack_prob=payload.get("attack_prob", 0.1),
            diversion_factor=payload.get("diversion_factor", 0.6),
            detect_prob=payload.get("detect_prob", 0.8),
            recover_prob=payload.get("recover_prob", 0.9),
            reward_weights=weights,
        )
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"malformed scenario document: {exc}") from exc


def save_config(config: ScenarioConfig, path: str) -> None:
    atomic_write_json(path, config_to_dict(config))


def load_config(path: str) -> ScenarioConfig:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise FileFormatError(f"{path}: expected a JSON object at top level")
    return config_from_dict(payload)
