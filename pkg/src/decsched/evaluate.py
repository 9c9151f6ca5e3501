"""Exact average-reward evaluation of joint FSC policies.

A model and a joint controller induce a finite Markov chain over pairs
``(joint node vector, joint state)``.  With per-agent tables x (actions),
y (node transitions) and V (observations), the chain kernel is

    T[(n,s) -> (n',s')] = sum_a prod_k x_k(n_k, a_k) * W(s, a, s')
                          * prod_k sum_o' V_k(a_k, s', o') y_k(n_k, o', n'_k)

because observations are drawn independently per agent, which lets the
observation sum factor.  The long-run average reward is

    rho = sum_{n,s} mu(n,s) sum_a prod_k x_k(n_k, a_k) r(s, a)

with mu the stationary distribution of T.  The stationary solve assumes a
unichain kernel and verifies it; kernels with several closed classes are
reported as such and evaluated from a designated start distribution by
damped power iteration (the Cesaro limit).

Joint indices are mixed-radix flats (agent 0 most significant); the pair
(n-flat, s) flattens to ``n_flat * num_states + s``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .controller import FscPolicy
from .model import DecPomdp, digit_table, encode_mixed_radix

# Plain C einsum beats path-optimized einsum at desk scale: every contraction
# here has at most ~1e5-1e8 index combinations and path search costs more
# than it saves.
einsum = np.einsum

UNICHAIN = "unichain-verified"
MULTICHAIN = "multichain-detected"

__all__ = [
    "MULTICHAIN",
    "UNICHAIN",
    "DataError",
    "EvalReport",
    "OccupancyMeasure",
    "SearchSpaceError",
    "StationaryResult",
    "average_reward",
    "balance_residual",
    "default_initial_distribution",
    "deterministic_policy_count",
    "enumerate_deterministic",
    "induced_chain",
    "iter_deterministic_policies",
    "occupancy_measure",
    "stationary_distribution",
]


class DataError(ValueError):
    """Numeric garbage (NaN/Inf) where probabilities were expected."""


class SearchSpaceError(ValueError):
    """The brute-force enumeration would exceed its candidate budget."""


@dataclass
class EvalReport:
    average_reward: float
    stationarity_residual: float
    chain_classification: str

    def to_dict(self) -> dict:
        return {
            "average_reward": self.average_reward,
            "stationarity_residual": self.stationarity_residual,
            "chain_classification": self.chain_classification,
        }


@dataclass
class StationaryResult:
    distribution: np.ndarray
    residual: float
    classification: str


@dataclass
class OccupancyMeasure:
    """pi[n_flat, s, a_flat]: stationary (nodes, state, joint action) mass."""

    pi: np.ndarray
    num_nodes: list


class _Pieces:
    """Shared per-(model, policy) arrays for the kernel and the gradients."""

    def __init__(self, model: DecPomdp, policy: FscPolicy):
        if policy.num_agents != model.num_agents:
            raise ValueError(
                f"agent axis mismatch: model has {model.num_agents}, controller {policy.num_agents}"
            )
        if policy.num_actions != model.num_actions:
            raise ValueError(
                f"action axis mismatch: model has {model.num_actions}, controller {policy.num_actions}"
            )
        if policy.num_observations != model.num_observations:
            raise ValueError(
                f"observation axis mismatch: model has {model.num_observations}, "
                f"controller {policy.num_observations}"
            )
        self.model = model
        self.policy = policy
        K = model.num_agents
        self.radices = tuple(policy.num_nodes)
        self.NN = int(np.prod(self.radices))
        self.AK = model.num_joint_actions
        self.S = model.num_states
        self.a_dig = digit_table((model.num_actions,) * K)
        self.n_dig = digit_table(self.radices)
        # M_k[a, s', n, n'] = sum_o' V_k(a, s', o') y_k(n, o', n')
        self.M = [
            einsum("aso,jom->asjm", model.observation_fn[k], policy.node_law[k])
            for k in range(K)
        ]
        self.xprod = self.xprod_excluding(None)
        self.Mprod = self.mprod_excluding(None)

    def xprod_excluding(self, skip) -> np.ndarray:
        out = np.ones((self.AK, self.NN))
        for k in range(self.model.num_agents):
            if k == skip:
                continue
            x = self.policy.action_law[k]
            out = out * x[self.n_dig[:, k]][:, self.a_dig[:, k]].T
        return out

    def mprod_excluding(self, skip) -> np.ndarray:
        out = np.ones((self.AK, self.S, 1, 1))
        for k in range(self.model.num_agents):
            nk = self.radices[k]
            if k == skip:
                factor = np.ones((self.AK, self.S, nk, nk))
            else:
                factor = self.M[k][self.a_dig[:, k]]
            prev = out.shape[2]
            out = einsum("asnm,asuv->asnumv", out, factor).reshape(
                self.AK, self.S, prev * nk, prev * nk
            )
        return out

    def kernel(self) -> np.ndarray:
        T = einsum("an,sat,atnm->nsmt", self.xprod, self.model.transition, self.Mprod)
        return np.ascontiguousarray(T.reshape(self.NN * self.S, self.NN * self.S))

    def reward_by_node_state(self) -> np.ndarray:
        return einsum("an,sa->ns", self.xprod, self.model.reward)

    def joint_start(self, state_distribution: np.ndarray) -> np.ndarray:
        start = np.zeros(self.NN * self.S)
        n0 = encode_mixed_radix(self.policy.initial_node, self.radices)
        start[n0 * self.S : (n0 + 1) * self.S] = state_distribution
        return start


def induced_chain(model: DecPomdp, policy: FscPolicy) -> np.ndarray:
    """Row-stochastic kernel over (node vector, state) pairs."""
    return _Pieces(model, policy).kernel()


def _solve_with_normalization(kernel: np.ndarray, row: int):
    J = kernel.shape[0]
    A = kernel.T - np.eye(J)
    A[row, :] = 1.0
    b = np.zeros(J)
    b[row] = 1.0
    try:
        mu = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return None
    if not np.isfinite(mu).all():
        return None
    return mu


def _balance_residual(mu: np.ndarray, kernel: np.ndarray) -> float:
    return float(np.abs(mu @ kernel - mu).max())


def _emit(mu: np.ndarray) -> np.ndarray:
    mu = np.maximum(mu, 0.0)
    return mu / mu.sum()


def _num_closed_classes(kernel: np.ndarray) -> int:
    """Number of closed communicating classes of the kernel's support graph.

    Iterative Tarjan SCC; a class is closed when no edge leaves it.  The
    count equals the number of stationary degrees of freedom, so > 1 means
    multichain.  Kernels that reach this path are nearly deterministic,
    hence sparse, and the scan is cheap.
    """
    J = kernel.shape[0]
    adjacency = [np.nonzero(kernel[i] > 0.0)[0].tolist() for i in range(J)]
    index = [-1] * J
    low = [0] * J
    on_stack = [False] * J
    stack: list = []
    component = [-1] * J
    counter = 0
    num_components = 0
    for root in range(J):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, edge_pos = work[-1]
            if edge_pos == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            descended = False
            adj = adjacency[v]
            while edge_pos < len(adj):
                w = adj[edge_pos]
                edge_pos += 1
                if index[w] == -1:
                    work[-1] = (v, edge_pos)
                    work.append((w, 0))
                    descended = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if descended:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    component[w] = num_components
                    if w == v:
                        break
                num_components += 1
    closed = [True] * num_components
    for v in range(J):
        cv = component[v]
        for w in adjacency[v]:
            if component[w] != cv:
                closed[cv] = False
    return sum(closed)


def stationary_distribution(
    kernel: np.ndarray,
    start: np.ndarray | None = None,
    power_max_iters: int = 10**6,
    power_tol: float = 1e-12,
) -> StationaryResult:
    """Stationary distribution of a row-stochastic kernel.

    Solves ``(kernel^T - I) mu = 0`` with one balance equation replaced by
    normalization; a clean nonnegative solution with a small balance
    residual certifies rank deficiency exactly one (unichain).  Otherwise
    the nullspace dimension of ``kernel^T - I`` decides: deficiency one is
    still a unichain (solved via SVD); anything larger is multichain and
    falls back to damped power iteration from ``start`` (uniform if
    omitted), which converges to the long-run occupation of the classes
    reachable from there.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    J = kernel.shape[0]
    if kernel.ndim != 2 or kernel.shape != (J, J):
        raise ValueError(f"kernel must be square, got shape {kernel.shape}")
    if not np.isfinite(kernel).all():
        raise DataError("kernel contains NaN or Inf entries")

    # Fast path.  If the replaced system solves to a clean distribution, the
    # unreplaced rows have rank >= J-1, so the kernel cannot have two closed
    # classes: a finite well-conditioned solution certifies the unichain.
    mu_a = _solve_with_normalization(kernel, J - 1)
    if mu_a is not None and mu_a.min() >= -1e-9:
        mu = _emit(mu_a)
        residual = _balance_residual(mu, kernel)
        if residual <= 1e-10:
            return StationaryResult(mu, residual, UNICHAIN)

    # Slow path: count stationary degrees of freedom exactly.
    _, svals, vt = np.linalg.svd(kernel.T - np.eye(J))
    deficiency = int(np.sum(svals <= 1e-9 * max(1.0, float(svals[0]))))
    if deficiency <= 1:
        null = vt[-1]
        mu = _emit(null / null.sum())
        return StationaryResult(mu, _balance_residual(mu, kernel), UNICHAIN)

    mu = np.full(J, 1.0 / J) if start is None else np.asarray(start, dtype=np.float64)
    mu = mu / mu.sum()
    for iteration in range(power_max_iters):
        nxt = 0.5 * (mu + mu @ kernel)  # damping kills periodicity
        if np.abs(nxt - mu).max() <= power_tol:
            mu = nxt
            break
        mu = nxt
        if iteration % 4096 == 4095 and not np.isfinite(mu).all():
            raise DataError("power iteration diverged; kernel is not stochastic")
    mu = _emit(mu)
    return StationaryResult(mu, _balance_residual(mu, kernel), MULTICHAIN)


def default_initial_distribution(model: DecPomdp) -> np.ndarray:
    """Delta on the model's designated start state if its meta names one,
    otherwise uniform over all joint states."""
    start = np.zeros(model.num_states)
    idx = model.meta.get("initial_state")
    if isinstance(idx, int) and 0 <= idx < model.num_states:
        start[idx] = 1.0
    else:
        start[:] = 1.0 / model.num_states
    return start


def average_reward(
    model: DecPomdp,
    policy: FscPolicy,
    initial_state_distribution: np.ndarray | None = None,
) -> EvalReport:
    """Exact long-run average reward of the joint policy."""
    pieces = _Pieces(model, policy)
    if initial_state_distribution is None:
        initial_state_distribution = default_initial_distribution(model)
    result = stationary_distribution(
        pieces.kernel(), start=pieces.joint_start(initial_state_distribution)
    )
    rho = float(result.distribution @ pieces.reward_by_node_state().reshape(-1))
    return EvalReport(rho, result.residual, result.classification)


def occupancy_measure(
    model: DecPomdp,
    policy: FscPolicy,
    initial_state_distribution: np.ndarray | None = None,
) -> OccupancyMeasure:
    """Stationary joint (node vector, state, joint action) distribution."""
    pieces = _Pieces(model, policy)
    if initial_state_distribution is None:
        initial_state_distribution = default_initial_distribution(model)
    result = stationary_distribution(
        pieces.kernel(), start=pieces.joint_start(initial_state_distribution)
    )
    mu2 = result.distribution.reshape(pieces.NN, pieces.S)
    pi = einsum("ns,an->nsa", mu2, pieces.xprod)
    return OccupancyMeasure(np.maximum(pi, 0.0), list(pieces.radices))


def balance_residual(model: DecPomdp, policy: FscPolicy, occupancy: OccupancyMeasure) -> float:
    """Max-norm violation of the occupancy balance equation.

    The predicted next-step mass is
    ``pi'(n',s',a') = (sum_{n,s,a} pi(n,s,a) W(s,a,s') M(a,s',n,n')) * x(a'|n')``
    with M the per-agent observation/node factor product.
    """
    pieces = _Pieces(model, policy)
    inflow = einsum("nsa,sat,atnm->mt", occupancy.pi, model.transition, pieces.Mprod)
    predicted = einsum("mt,am->mta", inflow, pieces.xprod)
    return float(np.abs(predicted - occupancy.pi).max())


def deterministic_policy_count(num_nodes, num_actions: int, num_observations: int) -> int:
    total = 1
    for n in num_nodes:
        total *= num_actions**n * n ** (n * num_observations)
    return total


def _agent_deterministic_controllers(n: int, num_actions: int, num_observations: int):
    """All (one-hot action law, one-hot node law) pairs, smallest encoding first."""
    controllers = []
    for acts in itertools.product(range(num_actions), repeat=n):
        x = np.zeros((n, num_actions))
        x[np.arange(n), acts] = 1.0
        for trans in itertools.product(range(n), repeat=n * num_observations):
            y = np.zeros((n, num_observations, n))
            for idx, target in enumerate(trans):
                y[idx // num_observations, idx % num_observations, target] = 1.0
            controllers.append((x, y))
    return controllers


def iter_deterministic_policies(num_agents: int, num_nodes, num_actions: int, num_observations: int):
    """Yield every deterministic joint FSC in lexicographic encoding order."""
    per_agent = [
        _agent_deterministic_controllers(num_nodes[k], num_actions, num_observations)
        for k in range(num_agents)
    ]
    for combo in itertools.product(*per_agent):
        yield FscPolicy([c[0] for c in combo], [c[1] for c in combo])


def enumerate_deterministic(
    model: DecPomdp,
    nodes_per_agent,
    guard: int = 10**7,
    initial_state_distribution: np.ndarray | None = None,
):
    """Exhaustive search over deterministic joint FSCs of the given size.

    Returns ``(best policy, best average reward)``; exact ties keep the
    lexicographically smallest encoding because candidates are visited in
    that order and replaced only on strict improvement.
    """
    nodes_per_agent = list(nodes_per_agent)
    if len(nodes_per_agent) != model.num_agents:
        raise ValueError(
            f"nodes_per_agent has {len(nodes_per_agent)} entries for {model.num_agents} agents"
        )
    total = deterministic_policy_count(nodes_per_agent, model.num_actions, model.num_observations)
    if total > guard:
        raise SearchSpaceError(
            f"deterministic search space has {total} candidates, over the {guard} budget"
        )
    best_policy = None
    best_value = -np.inf
    for candidate in iter_deterministic_policies(
        model.num_agents, nodes_per_agent, model.num_actions, model.num_observations
    ):
        report = average_reward(model, candidate, initial_state_distribution)
        if report.average_reward > best_value:
            best_policy = candidate
            best_value = report.average_reward
    return best_policy, float(best_value)
