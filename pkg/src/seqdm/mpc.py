"""Receding-horizon control on tabular and linear models.

A horizon ``H`` plan covers decisions ``t = 0..H``; with a terminal pair
``(x*, u*)`` the plan must end there, ``(X_H, U_H) = (x*, u*)``, for every
realisation of the disturbance.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .control import LinearSystem, QuadraticCost, riccati_recursion
from .mdp import InfeasibleError, TabularMdp, finite_horizon_dp, support_reachable
from .stats import mean_half_width


@dataclass(frozen=True)
class MpcSpec:
    model: TabularMdp | tuple[LinearSystem, QuadraticCost]
    horizon: int
    terminal: tuple[int, int] | np.ndarray | None = None
    replan_every: int = 1
    r_max: float | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.replan_every < 1:
            raise ValueError("replan_every must be at least 1")
        if self.tabular and self.terminal is not None:
            x, u = self.terminal
            if not (0 <= x < self.model.num_states and 0 <= u < self.model.num_actions):
                raise ValueError(f"terminal pair {self.terminal} is not valid for the model")

    @property
    def tabular(self) -> bool:
        return isinstance(self.model, TabularMdp)


def plan_tables(spec: MpcSpec, x: int) -> list[np.ndarray]:
    """Q-tables ``Q_{t->H}`` for ``t = 0..H`` of the constrained plan from ``x``."""
    mdp = spec.model
    mask = None
    if spec.terminal is not None:
        x_star, u_star = spec.terminal
        if not support_reachable(mdp, x, spec.horizon, [x_star]):
            raise InfeasibleError(x, spec.horizon,
                                  f"terminal state {x_star} cannot be forced from state {x} in H={spec.horizon} steps")
        mask = {(x_star, u_star)}
    return finite_horizon_dp(mdp, spec.horizon + 1, terminal_mask=mask, initial_state=x)


def _linear_gains(spec: MpcSpec) -> list[np.ndarray]:
    sys, cost = spec.model
    return [K for _, K in riccati_recursion(sys, cost, spec.horizon, terminal=spec.terminal)]


def mpc_action(spec: MpcSpec, x):
    """First action of the horizon-``H`` plan from state ``x``.

    Tabular models return an action index (ties to the lowest index) and
    raise :class:`InfeasibleError` if the terminal pair cannot be forced.
    Linear models return ``u = -K_0 x`` for the finite-horizon LQR plan on
    the noise-free model, with ``terminal`` read as a terminal cost matrix.
    """
    if spec.tabular:
        return int(np.argmax(plan_tables(spec, int(x))[0][int(x)]))
    return -_linear_gains(spec)[0] @ np.asarray(x, dtype=float)


@dataclass
class MpcRun:
    states: list
    actions: list
    rewards: list[float]
    events: list[dict] = field(default_factory=list)
    planned: list[float] = field(default_factory=list)
    seed: int | None = None

    @property
    def average_reward(self) -> float:
        return float(np.mean(self.rewards))

    def csv_rows(self) -> list[tuple]:
        return [(self.seed, t, _fmt(s), _fmt(a), r)
                for t, (s, a, r) in enumerate(zip(self.states, self.actions, self.rewards))]


def _fmt(v):
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(c)) for c in np.ravel(v))
    return v


def write_trajectory_csv(runs: list[MpcRun]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "t", "state", "action", "reward"])
    for run in runs:
        w.writerows(run.csv_rows())
    return buf.getvalue()


def run_mpc(spec: MpcSpec, env: Callable, T: int, rng: np.random.Generator, x0=0,
            seed: int | None = None) -> MpcRun:
    """Closed-loop rollout of ``T`` steps.

    ``env(x, u, rng) -> (x', r)``.  Plans are recomputed every
    ``spec.replan_every`` steps; in between the stored plan is followed.
    An infeasible replan is logged as an event and the unconstrained plan is
    used for that step.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    run = MpcRun([], [], [], seed=seed)
    x = x0
    tables = gains = None
    cache: dict[int, tuple] = {}
    age = 0
    for t in range(T):
        if t % spec.replan_every == 0:
            age = 0
            if spec.tabular:
                # plans depend only on the state, so repeated states reuse them
                if int(x) not in cache:
                    try:
                        cache[int(x)] = (plan_tables(spec, int(x)), None)
                    except InfeasibleError as err:
                        cache[int(x)] = (finite_horizon_dp(spec.model, spec.horizon + 1), str(err))
                tables, err = cache[int(x)]
                if err is not None:
                    run.events.append({"t": t, "state": int(x), "kind": "infeasible", "message": err})
                run.planned.append(float(tables[0][int(x)].max()))
            else:
                gains = _linear_gains(spec)
        if spec.tabular:
            q = tables[min(age, len(tables) - 1)][int(x)]
            u = int(np.argmax(q))
        else:
            u = -gains[min(age, len(gains) - 1)] @ np.asarray(x, dtype=float)
        x_next, r = env(x, u, rng)
        run.states.append(x)
        run.actions.append(u)
        run.rewards.append(float(r))
        x = x_next
        age += 1
    return run


def linear_env(sys: LinearSystem, cost: QuadraticCost, noise: bool = True):
    """Stochastic simulator ``x' = A x + B u + w`` with reward ``-(x'Phi x + u'Psi u)``."""
    chol = np.linalg.cholesky(sys.Sw + 1e-15 * np.eye(sys.state_dim)) if noise else None

    def step(x, u, rng):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(u)
        r = -(x @ cost.Phi @ x + u @ cost.Psi @ u)
        x_next = sys.A @ x + sys.B @ u
        if chol is not None:
            x_next = x_next + chol @ rng.standard_normal(sys.state_dim)
        return x_next, float(r)

    return step


@dataclass(frozen=True)
class BoundCheck:
    empirical_avg: float
    half_width: float
    lower_bound: float
    planned_value: float
    burn_in: float
    residual_reward: float
    replications: int
    T: int

    @property
    def holds(self) -> bool:
        return self.empirical_avg >= self.lower_bound - 2 * self.half_width

    def to_dict(self) -> dict:
        return {"avg": self.empirical_avg, "half_width": self.half_width, "lower_bound": self.lower_bound,
                "planned_value": self.planned_value, "burn_in": self.burn_in,
                "residual_reward": self.residual_reward, "replications": self.replications, "T": self.T}


def mpc_bound_check(spec: MpcSpec, env: Callable, T: int, replications: int, rng: np.random.Generator,
                    x0: int = 0) -> BoundCheck:
    """Average reward over replications against the terminal-constrained MPC lower bound.

    The bound is ``(Q_{0->H}(x0, u0) - H R_max) / T + E_W[R(f(x*, u*, W), 0)]``
    and the empirical side is ``(1/T) sum_{t=0}^{T} R(x_t, u_t)``, averaged
    over ``replications`` independent streams spawned from ``rng``.
    """
    if not spec.tabular:
        raise ValueError("the bound check needs a tabular model")
    if spec.r_max is None:
        raise ValueError("R_max must be declared on the MpcSpec")
    if spec.terminal is None:
        raise ValueError("a terminal pair (x*, u*) must be declared")
    mdp = spec.model
    if mdp.reward.max() > spec.r_max:
        raise ValueError(f"model rewards exceed the declared R_max={spec.r_max}")
    x_star, u_star = spec.terminal
    q0 = float(plan_tables(spec, x0)[0][x0].max())
    residual = float(mdp.transition[x_star, u_star] @ mdp.reward[:, 0])
    burn_in = (q0 - spec.horizon * spec.r_max) / T
    totals = []
    for child in rng.spawn(replications):
        run = run_mpc(spec, env, T + 1, child, x0)
        totals.append(sum(run.rewards) / T)
    avg, hw = mean_half_width(totals)
    return BoundCheck(avg, hw, burn_in + residual, q0, burn_in, residual, replications, T)
