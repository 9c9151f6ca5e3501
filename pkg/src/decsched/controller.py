"""Per-agent stochastic finite-state controllers (policy graphs).

Agent k's controller has nodes ``0..n_k-1`` with

* ``action_law[k][n, a]``  - probability of emitting action a in node n,
* ``node_law[k][n, o', n']`` - probability of moving to node n' after
  observing o' in node n.

The update order is: observe, transition the node, then emit the action
from the *new* node, so a step's action is always drawn at the node the
controller currently occupies.  The per-step product table

    g[k][n, o', n', a'] = node_law[k][n, o', n'] * action_law[k][n', a']

couples the two laws; `from_product` inverts the coupling and rejects
tables that do not factor.  Controllers are strictly per-agent: nothing
here reads another agent's tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._io import FileFormatError, atomic_write_json, read_json
from .model import PROB_ATOL

__all__ = [
    "ConsistencyError",
    "FscPolicy",
    "ProductVars",
    "from_product",
    "load_policy",
    "policy_from_dict",
    "policy_to_dict",
    "random_policy",
    "sample_step",
    "save_policy",
    "to_product",
    "validate_policy",
]


class ConsistencyError(ValueError):
    """A product table does not factor as node_law x action_law."""


def _frozen(arr) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    out.setflags(write=False)
    return out


@dataclass(eq=False)
class FscPolicy:
    action_law: list  # per agent, (n_k, A)
    node_law: list  # per agent, (n_k, O, n_k)
    initial_node: list = field(default_factory=list)

    def __post_init__(self):
        self.action_law = [_frozen(x) for x in self.action_law]
        self.node_law = [_frozen(y) for y in self.node_law]
        if not self.initial_node:
            self.initial_node = [0] * len(self.action_law)
        self.initial_node = [int(n) for n in self.initial_node]

    @property
    def num_agents(self) -> int:
        return len(self.action_law)

    @property
    def num_nodes(self) -> list:
        return [x.shape[0] for x in self.action_law]

    @property
    def num_actions(self) -> int:
        return self.action_law[0].shape[1]

    @property
    def num_observations(self) -> int:
        return self.node_law[0].shape[1]

    def replace_agent(self, k: int, action_law=None, node_law=None) -> "FscPolicy":
        xs = list(self.action_law)
        ys = list(self.node_law)
        if action_law is not None:
            xs[k] = action_law
        if node_law is not None:
            ys[k] = node_law
        return FscPolicy(xs, ys, list(self.initial_node))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FscPolicy):
            return NotImplemented
        return (
            self.num_agents == other.num_agents
            and self.initial_node == other.initial_node
            and all(np.array_equal(a, b) for a, b in zip(self.action_law, other.action_law))
            and all(np.array_equal(a, b) for a, b in zip(self.node_law, other.node_law))
        )

    __hash__ = None


def validate_policy(policy: FscPolicy, atol: float = PROB_ATOL) -> list:
    """Row-normalization and range violations, as human-readable strings."""
    problems = []
    for k in range(policy.num_agents):
        x, y = policy.action_law[k], policy.node_law[k]
        n = x.shape[0]
        if y.shape[0] != n or y.shape[2] != n:
            problems.append(f"agent {k}: node_law shape {y.shape} inconsistent with {n} nodes")
            continue
        if ((x < -atol) | (x > 1 + atol)).any() or ((y < -atol) | (y > 1 + atol)).any():
            problems.append(f"agent {k}: entries outside [0, 1]")
        bad = np.argwhere(np.abs(x.sum(axis=1) - 1.0) > atol)
        for (node,) in bad:
            problems.append(f"agent {k}: action row n={node} sums to {x[node].sum()!r}")
        bad = np.argwhere(np.abs(y.sum(axis=2) - 1.0) > atol)
        for node, o in bad:
            problems.append(f"agent {k}: node row (n={node}, o'={o}) sums to {y[node, o].sum()!r}")
        if not 0 <= policy.initial_node[k] < n:
            problems.append(f"agent {k}: initial node {policy.initial_node[k]} out of range")
    return problems


def random_policy(num_nodes, num_actions: int, num_observations: int, rng) -> FscPolicy:
    """Rows drawn from a flat Dirichlet, i.e. uniformly over each simplex."""
    xs, ys = [], []
    for n in num_nodes:
        xs.append(rng.dirichlet(np.ones(num_actions), size=n))
        ys.append(rng.dirichlet(np.ones(n), size=(n, num_observations)))
    return FscPolicy(xs, ys)


@dataclass(eq=False)
class ProductVars:
    tables: list  # per agent, (n_k, O, n_k, A)

    def __post_init__(self):
        self.tables = [_frozen(g) for g in self.tables]

    @property
    def num_agents(self) -> int:
        return len(self.tables)


def to_product(policy: FscPolicy) -> ProductVars:
    """g[k](n, o', n', a') = node_law(n, o', n') * action_law(n', a')."""
    tables = [
        np.einsum("jon,na->jona", policy.node_law[k], policy.action_law[k])
        for k in range(policy.num_agents)
    ]
    return ProductVars(tables)


def from_product(g: ProductVars, witness_tol: float = 1e-6) -> FscPolicy:
    """Recover (action_law, node_law) from product tables.

    ``node_law = sum_a' g`` always; ``action_law`` at node n' is read off any
    witness pair (n, o') with positive mass into n'.  If two witnesses
    disagree by more than ``witness_tol`` per entry the table does not
    factor and a `ConsistencyError` is raised.  Nodes that no witness
    reaches keep a uniform action row (the factorization is
    underdetermined there).
    """
    xs, ys = [], []
    for k, table in enumerate(g.tables):
        n, num_obs, _, num_act = table.shape
        y = table.sum(axis=3)
        x = np.full((n, num_act), 1.0 / num_act)
        seen = np.zeros(n, dtype=bool)
        for j in range(n):
            for o in range(num_obs):
                for n2 in range(n):
                    mass = y[j, o, n2]
                    if mass <= 1e-12:
                        continue
                    candidate = table[j, o, n2] / mass
                    if seen[n2]:
                        gap = np.abs(candidate - x[n2]).max()
                        if gap > witness_tol:
                            raise ConsistencyError(
                                f"agent {k}: action law at node {n2} differs across "
                                f"witnesses by {gap:.3e} (> {witness_tol:.1e})"
                            )
                    else:
                        x[n2] = candidate
                        seen[n2] = True
        xs.append(x)
        ys.append(y)
    return FscPolicy(xs, ys)


def _sample(cdf_row, u: float) -> int:
    idx = int(np.searchsorted(cdf_row, u, side="right"))
    return min(idx, len(cdf_row) - 1)


def sample_step(policy: FscPolicy, k: int, node: int, observation: int, rng) -> tuple:
    """One controller update: next node from the observation, then the action.

    Draws exactly two uniforms from ``rng`` (node first), so fixed seeds
    reproduce exactly.
    """
    y_row = np.cumsum(policy.node_law[k][node, observation])
    next_node = _sample(y_row, rng.random())
    x_row = np.cumsum(policy.action_law[k][next_node])
    action = _sample(x_row, rng.random())
    return action, next_node


def policy_to_dict(policy: FscPolicy) -> dict:
    return {
        "agents": [
            {
                "nodes": int(policy.num_nodes[k]),
                "x": policy.action_law[k].tolist(),
                "y": policy.node_law[k].tolist(),
                "initial_node": policy.initial_node[k],
            }
            for k in range(policy.num_agents)
        ]
    }


def policy_from_dict(payload: dict) -> FscPolicy:
    try:
        agents = payload["agents"]
        xs = [np.asarray(a["x"], dtype=np.float64) for a in agents]
        ys = [np.asarray(a["y"], dtype=np.float64) for a in agents]
        init = [int(a.get("initial_node", 0)) for a in agents]
        for a, x in zip(agents, xs):
            if x.shape[0] != int(a["nodes"]):
                raise ValueError(f"declared {a['nodes']} nodes, x has {x.shape[0]} rows")
        return FscPolicy(xs, ys, init)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FileFormatError(f"malformed controller document: {exc}") from exc


def save_policy(policy: FscPolicy, path: str) -> None:
    atomic_write_json(path, policy_to_dict(policy))


def load_policy(path: str) -> FscPolicy:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise FileFormatError(f"{path}: expected a JSON object at top level")
    policy = policy_from_dict(payload)
    problems = validate_policy(policy)
    if problems:
        raise FileFormatError("controller violates invariants: " + "; ".join(problems))
    return policy
