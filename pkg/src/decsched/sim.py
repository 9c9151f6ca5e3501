"""Monte Carlo rollouts of a joint FSC policy on a flat model.

Within a step the draw order is fixed: each agent's action from its
current node (agents in index order), then the next state, then each
agent's observation, then each agent's node transition - 3K+1 uniforms
per step.  `run` pre-draws each replication's uniforms in one block from
a stream seeded by (seed, replication index), which consumes the stream
exactly like repeated `step` calls on the same generator, so traces are
reproducible per replication and `run` is the literal composition of
`step`.
"""

from __future__ import annotations

import csv
import os
import tempfile
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .controller import FscPolicy
from .evaluate import default_initial_distribution
from .model import PROB_ATOL, DecPomdp

__all__ = ["SimConfig", "SimTrace", "run", "step", "write_trace_csv"]


@dataclass
class SimConfig:
    steps: int
    replications: int = 10
    burn_in: int = 0
    seed: int = 0
    initial_state_distribution: np.ndarray | None = None

    def __post_init__(self):
        if not self.steps > self.burn_in >= 0:
            raise ValueError(
                f"need steps > burn_in >= 0, got steps={self.steps} burn_in={self.burn_in}"
            )
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.initial_state_distribution is not None:
            dist = np.asarray(self.initial_state_distribution, dtype=np.float64)
            if abs(dist.sum() - 1.0) > PROB_ATOL or (dist < 0).any():
                raise ValueError("initial_state_distribution must be a probability vector")
            self.initial_state_distribution = dist


@dataclass
class SimTrace:
    replication_means: np.ndarray
    pooled_mean: float
    standard_error: float
    records: list | None = None  # rows: (replication, t, s, nodes, actions, obs, reward)

    def summary_dict(self) -> dict:
        return {
            "pooled_mean": self.pooled_mean,
            "standard_error": self.standard_error,
            "replication_means": self.replication_means.tolist(),
        }


def _pick(cdf, u: float) -> int:
    idx = bisect_right(cdf, u)
    return idx if idx < len(cdf) else len(cdf) - 1


class _Sampler:
    """Cumulative lookup tables; state rows are cached lazily per (s, a)."""

    def __init__(self, model: DecPomdp, policy: FscPolicy):
        if policy.num_agents != model.num_agents:
            raise ValueError(
                f"agent axis mismatch: model has {model.num_agents}, controller {policy.num_agents}"
            )
        if policy.num_actions != model.num_actions:
            raise ValueError("controller action axis does not match the model")
        if policy.num_observations != model.num_observations:
            raise ValueError("controller observation axis does not match the model")
        self.model = model
        self.policy = policy
        self.K = model.num_agents
        self.act_base = (model.num_actions,) * self.K
        self.act_cdf = [
            [np.cumsum(policy.action_law[k][n]).tolist() for n in range(policy.num_nodes[k])]
            for k in range(self.K)
        ]
        self.obs_cdf = [
            [
                [np.cumsum(model.observation_fn[k, a, s2]).tolist() for s2 in range(model.num_states)]
                for a in range(model.num_actions)
            ]
            for k in range(self.K)
        ]
        self.node_cdf = [
            [
                [np.cumsum(policy.node_law[k][n, o]).tolist() for o in range(model.num_observations)]
                for n in range(policy.num_nodes[k])
            ]
            for k in range(self.K)
        ]
        self._state_rows: dict = {}

    def state_row(self, s: int, a_flat: int):
        key = (s, a_flat)
        row = self._state_rows.get(key)
        if row is None:
            row = np.cumsum(self.model.transition[s, a_flat]).tolist()
            self._state_rows[key] = row
        return row

    def advance(self, state: int, nodes, uniforms):
        """One transition; ``uniforms`` supplies the step's 3K+1 draws in order."""
        K = self.K
        actions = [0] * K
        a_flat = 0
        for k in range(K):
            actions[k] = _pick(self.act_cdf[k][nodes[k]], uniforms[k])
            a_flat = a_flat * len(self.act_cdf[k][0]) + actions[k]
        reward = float(self.model.reward[state, a_flat])
        next_state = _pick(self.state_row(state, a_flat), uniforms[K])
        observations = [
            _pick(self.obs_cdf[k][actions[k]][next_state], uniforms[K + 1 + k]) for k in range(K)
        ]
        next_nodes = [
            _pick(self.node_cdf[k][nodes[k]][observations[k]], uniforms[2 * K + 1 + k])
            for k in range(K)
        ]
        return next_state, next_nodes, actions, observations, reward


def step(model: DecPomdp, policy: FscPolicy, state: int, nodes, rng):
    """Sample one joint transition.

    Returns ``(next_state, next_nodes, actions, observations, reward)``
    where the reward is for the current state and the sampled actions.
    """
    sampler = _Sampler(model, policy)
    uniforms = [rng.random() for _ in range(3 * model.num_agents + 1)]
    return sampler.advance(int(state), list(nodes), uniforms)


def _run_replication(sampler: _Sampler, config: SimConfig, start_cdf, rep: int, collect: bool):
    rng = np.random.default_rng([config.seed, rep])
    state = _pick(start_cdf, rng.random())
    nodes = list(sampler.policy.initial_node)
    uniforms = rng.random((config.steps, 3 * sampler.K + 1))
    total = 0.0
    rows = [] if collect else None
    for t in range(config.steps):
        next_state, next_nodes, actions, obs, reward = sampler.advance(state, nodes, uniforms[t])
        if t >= config.burn_in:
            total += reward
        if collect:
            rows.append((rep, t, state, tuple(nodes), tuple(actions), tuple(obs), reward))
        state, nodes = next_state, next_nodes
    mean = total / (config.steps - config.burn_in)
    return mean, rows


def run(model: DecPomdp, policy: FscPolicy, config: SimConfig, collect_records: bool = False) -> SimTrace:
    """Independent replications; the pooled estimate and its standard error
    come from the spread of per-replication means."""
    sampler = _Sampler(model, policy)
    dist = config.initial_state_distribution
    if dist is None:
        dist = default_initial_distribution(model)
    start_cdf = np.cumsum(dist).tolist()

    from .solver import worker_count  # local import: avoids a module cycle

    workers = worker_count(config.replications)
    task = lambda rep: _run_replication(sampler, config, start_cdf, rep, collect_records)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(task, range(config.replications)))
    else:
        outcomes = [task(rep) for rep in range(config.replications)]

    means = np.array([o[0] for o in outcomes])
    pooled = float(means.mean())
    se = float(means.std(ddof=1) / np.sqrt(len(means))) if len(means) > 1 else 0.0
    records = None
    if collect_records:
        records = [row for o in outcomes for row in o[1]]
    return SimTrace(means, pooled, se, records)


def write_trace_csv(trace: SimTrace, path: str) -> None:
    """CSV with dash-joined vectors, one row per simulated step.

    Written through a temp file in the target directory, then renamed.
    """
    if trace.records is None:
        raise ValueError("trace was run without record collection")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["replication", "t", "state", "node_vector", "action_vector", "obs_vector", "reward"]
            )
            for rep, t, state, nodes, actions, obs, reward in trace.records:
                writer.writerow(
                    [
                        rep,
                        t,
                        state,
                        "-".join(map(str, nodes)),
                        "-".join(map(str, actions)),
                        "-".join(map(str, obs)),
                        repr(reward),
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
