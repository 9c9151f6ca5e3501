"""Fixed-size FSC optimization by multi-start alternating projected ascent.

The objective is the exact average reward from `evaluate`; agents are
optimized one block at a time (the other controllers stay fixed, which the
per-agent product structure of the induced chain makes a smooth
single-agent subproblem).  Each inner step takes a projected-gradient
ascent step on one agent's (action law, node law) with backtracking, so
every iterate keeps exactly normalized rows and the per-sweep objective
history is non-decreasing.

Gradients come from the stationary-distribution sensitivity identity

    d rho = mu^T (dr + dP h),   (I - P + 1 mu^T) h = r - rho 1

with P the induced chain, r the per-(nodes, state) expected reward and h
the bias vector.  Because P and r are linear in any one agent's tables,
the partials reduce to contractions of mu, h and the other agents'
factors; rows are then projected onto the simplex tangent (subtract the
row's policy-weighted mean), which is what a central finite difference of
the normalize-then-evaluate objective measures.  Both routes are exposed
and must agree; points where the chain degenerates to several closed
classes fall back to finite differences.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .controller import FscPolicy, random_policy
from .evaluate import UNICHAIN, _Pieces, average_reward, einsum, stationary_distribution
from .model import DecPomdp

__all__ = [
    "MultichainPointError",
    "SolveConfig",
    "SolveResult",
    "best_response_sweep",
    "gradient",
    "gradient_fd",
    "objective",
    "project_rows_to_simplex",
    "solve",
    "worker_count",
]


class MultichainPointError(ValueError):
    """The analytic gradient needs a unichain kernel at the current point."""


def worker_count(num_items: int) -> int:
    """Concurrency cap: DECPOMDP_THREADS if set, else machine parallelism."""
    env = os.environ.get("DECPOMDP_THREADS", "")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError:
        cap = 1
    return max(1, min(cap, num_items))


@dataclass
class SolveConfig:
    nodes_per_agent: list
    restarts: int = 20
    max_outer_iters: int = 40
    inner_steps: int = 4
    step_size: float = 0.5
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        self.nodes_per_agent = [int(n) for n in self.nodes_per_agent]
        if any(n < 1 for n in self.nodes_per_agent):
            raise ValueError(f"nodes_per_agent must be >= 1, got {self.nodes_per_agent}")
        for name in ("restarts", "max_outer_iters", "inner_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass
class SolveResult:
    policy: FscPolicy
    objective: float
    history: list
    restarts_summary: list
    gradient_fallbacks: int = 0

    def metrics_dict(self) -> dict:
        return {
            "objective": self.objective,
            "history": list(self.history),
            "restarts_summary": list(self.restarts_summary),
            "gradient_fallbacks": self.gradient_fallbacks,
        }


def objective(model: DecPomdp, policies: FscPolicy) -> float:
    """Average reward of the joint policy; the evaluator is the single source."""
    return average_reward(model, policies).average_reward


def project_rows_to_simplex(rows: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex.

    Sort-based threshold method: with u the row sorted descending, find the
    largest j with u_j + (1 - sum_{i<=j} u_i)/j > 0 and shift by that
    amount, clipping at zero.

    The projection is invariant to adding a constant per row, and entries
    more than 1 below the row maximum can never enter the support (the
    support threshold sits within 1 of the maximum), so rows are shifted
    and clipped first; this keeps the arithmetic exact even for the huge
    components a finite-difference gradient can produce near an objective
    discontinuity.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    rows = rows - rows.max(axis=1, keepdims=True)
    rows = np.maximum(rows, -2.0)
    u = np.sort(rows, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1)
    j = np.arange(1, rows.shape[1] + 1)
    cond = u + (1.0 - css) / j > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)  # last True per row
    shift = (1.0 - css[np.arange(rows.shape[0]), rho]) / (rho + 1)
    return np.maximum(rows + shift[:, None], 0.0)


def _mu_and_bias(model: DecPomdp, policy: FscPolicy, pieces: _Pieces):
    kernel = pieces.kernel()
    result = stationary_distribution(kernel)
    if result.classification != UNICHAIN:
        raise MultichainPointError("induced chain has several closed classes")
    mu = result.distribution
    rvec = pieces.reward_by_node_state().reshape(-1)
    rho = float(mu @ rvec)
    J = kernel.shape[0]
    lhs = np.eye(J) - kernel + np.outer(np.ones(J), mu)
    h = np.linalg.solve(lhs, rvec - rho)
    return mu, h, rho


def gradient(model: DecPomdp, policy: FscPolicy, k: int):
    """Analytic tangent gradient of the average reward for agent k.

    Returns ``(gx, gy)`` shaped like the agent's action law (n, A) and node
    law (n, O, n).  Raises `MultichainPointError` off the unichain set.
    """
    pieces = _Pieces(model, policy)
    mu, h, _ = _mu_and_bias(model, policy, pieces)
    NN, S = pieces.NN, pieces.S
    mu2 = mu.reshape(NN, S)
    h2 = h.reshape(NN, S)
    W = model.transition
    a_dig_k = pieces.a_dig[:, k]
    n_dig_k = pieces.n_dig[:, k]
    nk = pieces.radices[k]
    num_actions = model.num_actions
    num_obs = model.num_observations

    # d rho / d x_k(m, b): drop agent k's action factor, pin its digits.
    H1 = einsum("atnm,mt->atn", pieces.Mprod, h2)
    C = einsum("sat,atn->ans", W, H1) + model.reward.T[:, None, :]
    F = einsum("ns,ans->an", mu2, C) * pieces.xprod_excluding(k)
    gx = np.zeros((nk, num_actions))
    for b in range(num_actions):
        F_b = F[a_dig_k == b]
        for m in range(nk):
            gx[m, b] = F_b[:, n_dig_k == m].sum()

    # d rho / d y_k(m, o', m'): drop agent k's observation/node factor.
    D = einsum("ns,an,sat->ant", mu2, pieces.xprod, W)
    MpE = pieces.mprod_excluding(k)
    V_sel = model.observation_fn[k][a_dig_k]  # (AK, S, O)
    ind = (n_dig_k[:, None] == np.arange(nk)[None, :]).astype(np.float64)
    G2 = einsum("ant,atnm,mt,nu,mv->atuv", D, MpE, h2, ind, ind)
    gy = einsum("ato,atuv->uov", V_sel, G2)

    # Tangent projection: a finite difference of the normalize-then-evaluate
    # objective sees the raw partial minus the row's policy-weighted mean.
    x, y = policy.action_law[k], policy.node_law[k]
    gx = gx - (x * gx).sum(axis=1, keepdims=True)
    gy = gy - (y * gy).sum(axis=2, keepdims=True)
    return gx, gy


def _objective_with_row(model, policy, k, index, value, kind):
    if kind == "x":
        x = np.array(policy.action_law[k])
        x[index[0], index[1]] = value
        x[index[0]] /= x[index[0]].sum()
        cand = policy.replace_agent(k, action_law=x)
    else:
        y = np.array(policy.node_law[k])
        y[index[0], index[1], index[2]] = value
        y[index[0], index[1]] /= y[index[0], index[1]].sum()
        cand = policy.replace_agent(k, node_law=y)
    return average_reward(model, cand).average_reward


def gradient_fd(model: DecPomdp, policy: FscPolicy, k: int, step: float = 1e-6):
    """Central finite differences of the normalize-then-evaluate objective.

    Entries smaller than ``step`` get a forward difference so probing never
    leaves the nonnegative orthant.
    """
    x, y = policy.action_law[k], policy.node_law[k]
    base = average_reward(model, policy).average_reward
    gx = np.zeros_like(x)
    for m in range(x.shape[0]):
        for b in range(x.shape[1]):
            v = x[m, b]
            hi = _objective_with_row(model, policy, k, (m, b), v + step, "x")
            if v >= step:
                lo = _objective_with_row(model, policy, k, (m, b), v - step, "x")
                gx[m, b] = (hi - lo) / (2 * step)
            else:
                gx[m, b] = (hi - base) / step
    gy = np.zeros_like(y)
    for m in range(y.shape[0]):
        for o in range(y.shape[1]):
            for m2 in range(y.shape[2]):
                v = y[m, o, m2]
                hi = _objective_with_row(model, policy, k, (m, o, m2), v + step, "y")
                if v >= step:
                    lo = _objective_with_row(model, policy, k, (m, o, m2), v - step, "y")
                    gy[m, o, m2] = (hi - lo) / (2 * step)
                else:
                    gy[m, o, m2] = (hi - base) / step
    return gx, gy


def _ascend_agent(model, policy, k, config, current, grad_cache=None):
    """inner_steps projected-ascent steps on agent k; never decreases.

    ``grad_cache`` memoizes fallback gradients per exact policy point:
    stalled sweeps revisit the same point, and the finite-difference
    fallback is far too expensive to recompute there.
    """
    obj = current
    fallbacks = 0
    for _ in range(config.inner_steps):
        try:
            gx, gy = gradient(model, policy, k)
        except MultichainPointError:
            key = None
            if grad_cache is not None:
                key = (k, policy.action_law[k].tobytes(), policy.node_law[k].tobytes())
            if key is not None and key in grad_cache:
                gx, gy = grad_cache[key]
            else:
                gx, gy = gradient_fd(model, policy, k)
                if key is not None:
                    grad_cache[key] = (gx, gy)
            fallbacks += 1
        scale = max(np.abs(gx).max(), np.abs(gy).max(), 0.0)
        if scale < 1e-12:
            break
        step = config.step_size
        accepted = False
        while step >= 1e-8:
            x_new = project_rows_to_simplex(policy.action_law[k] + step * gx)
            n, num_obs, _ = policy.node_law[k].shape
            y_new = project_rows_to_simplex(
                (policy.node_law[k] + step * gy).reshape(n * num_obs, n)
            ).reshape(n, num_obs, n)
            if np.array_equal(x_new, policy.action_law[k]) and np.array_equal(
                y_new, policy.node_law[k]
            ):
                step *= 0.5  # projection landed back on the iterate; no eval needed
                continue
            candidate = policy.replace_agent(k, action_law=x_new, node_law=y_new)
            cand_obj = objective(model, candidate)
            if cand_obj > obj:
                policy, obj = candidate, cand_obj
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return policy, obj, fallbacks


def best_response_sweep(
    model: DecPomdp, policies: FscPolicy, config: SolveConfig, current=None, grad_cache=None
):
    """One pass of per-agent ascent, agents in index order.

    Returns ``(policies, objective, fd_fallbacks)``; a stalled sweep returns
    the input unchanged.
    """
    obj = objective(model, policies) if current is None else current
    fallbacks = 0
    for k in range(model.num_agents):
        policies, obj, used = _ascend_agent(model, policies, k, config, obj, grad_cache)
        fallbacks += used
    return policies, obj, fallbacks


def _run_restart(model, config, restart_index):
    rng = np.random.default_rng([config.seed, restart_index])
    policy = random_policy(
        config.nodes_per_agent, model.num_actions, model.num_observations, rng
    )
    obj = objective(model, policy)
    history = [obj]
    fallbacks = 0
    stalled = 0
    grad_cache: dict = {}
    for _ in range(config.max_outer_iters):
        swept, new_obj, used = best_response_sweep(
            model, policy, config, current=obj, grad_cache=grad_cache
        )
        fallbacks += used
        history.append(new_obj)
        stalled = stalled + 1 if new_obj - obj < config.tol else 0
        unchanged = swept is policy  # sweeps are deterministic: a fixed point stays one
        policy, obj = swept, new_obj
        if stalled >= 3 or unchanged:
            break
    return policy, obj, history, fallbacks


def solve(model: DecPomdp, config: SolveConfig) -> SolveResult:
    """Best of ``restarts`` independent ascents, Dirichlet(1) initialized.

    Deterministic given the seed: restart r draws from a stream derived
    from (seed, r), and equal objectives (within 1e-9) keep the lowest
    restart index regardless of execution order.
    """
    if len(config.nodes_per_agent) != model.num_agents:
        raise ValueError(
            f"nodes_per_agent has {len(config.nodes_per_agent)} entries "
            f"for {model.num_agents} agents"
        )
    workers = worker_count(config.restarts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _run_restart(model, config, r), range(config.restarts)))
    else:
        results = [_run_restart(model, config, r) for r in range(config.restarts)]

    best = 0
    for r in range(1, config.restarts):
        if results[r][1] > results[best][1] + 1e-9:
            best = r
    policy, obj, history, _ = results[best]
    return SolveResult(
        policy=policy,
        objective=obj,
        history=history,
        restarts_summary=[res[1] for res in results],
        gradient_fallbacks=sum(res[3] for res in results),
    )
