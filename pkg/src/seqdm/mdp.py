"""Exact dynamic programming on finite Markov decision processes.

Q-tables are plain ``(S, A)`` float arrays and policies are ``(S,)`` integer
arrays.  Everything here is a pure function of its inputs.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Marker for infeasible (state, action) pairs in constrained finite-horizon
#: recursions.  It is absorbing: any expectation touching it with positive
#: probability is itself infeasible.
INFEASIBLE = -np.inf

PROB_ATOL = 1e-9


class DimensionError(ValueError):
    """Raised when array shapes do not match the model they are used with."""


class NotConvergedError(RuntimeError):
    """An iterative solver stopped at ``max_iter`` above tolerance.

    The last iterate and its residual are kept on the exception.
    """

    def __init__(self, message: str, residual: float, iterate: np.ndarray, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate
        self.iterations = iterations


class InfeasibleError(RuntimeError):
    """No action sequence satisfies the terminal constraint."""

    def __init__(self, state: int, time: int, message: str | None = None):
        super().__init__(message or f"recursively infeasible: state {state} at time {time} has no feasible action")
        self.state = state
        self.time = time


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with transition tensor ``P[s, a, s']`` and rewards ``R[s, a]``."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    reward_range: tuple[float, float] = field(default=(0.0, 1.0))

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise DimensionError(f"reward shape {R.shape} does not match (S, A) = {P.shape[:2]}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise DimensionError("need at least one state and one action")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ValueError("transition probabilities must be finite and nonnegative")
        sums = P.sum(axis=2)
        if np.max(np.abs(sums - 1.0)) > PROB_ATOL:
            s, a = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
            raise ValueError(f"transition row ({s}, {a}) sums to {sums[s, a]!r}, not 1")
        lo, hi = self.reward_range
        if not np.all(np.isfinite(R)) or R.min() < lo or R.max() > hi:
            raise ValueError(f"rewards must lie in [{lo}, {hi}]")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def replace(self, **changes) -> "TabularMdp":
        kwargs = dict(transition=self.transition, reward=self.reward,
                      discount=self.discount, reward_range=self.reward_range)
        kwargs.update(changes)
        return TabularMdp(**kwargs)

    def to_dict(self) -> dict:
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "gamma": self.discount,
            "P": self.transition.tolist(),
            "R": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, reward_range: tuple[float, float] | None = None) -> "TabularMdp":
        P = np.asarray(doc["P"], dtype=float)
        R = np.asarray(doc["R"], dtype=float)
        if P.shape[:2] != (doc["S"], doc["A"]):
            raise DimensionError(f"declared S={doc['S']}, A={doc['A']} but P has shape {P.shape}")
        if reward_range is None:
            reward_range = (min(0.0, float(R.min())), max(1.0, float(R.max())))
        return cls(P, R, float(doc["gamma"]), reward_range)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


def _check_q(q: np.ndarray, mdp: TabularMdp) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.num_states, mdp.num_actions):
        raise DimensionError(
            f"Q-table shape {q.shape} does not match MDP (S, A) = ({mdp.num_states}, {mdp.num_actions})"
        )
    return q


def _check_policy(policy: Sequence[int], mdp: TabularMdp) -> np.ndarray:
    pi = np.asarray(policy)
    if pi.shape != (mdp.num_states,) or not np.issubdtype(pi.dtype, np.integer):
        raise DimensionError(f"policy must be an integer array of length {mdp.num_states}")
    if pi.min() < 0 or pi.max() >= mdp.num_actions:
        raise ValueError(f"policy actions must lie in [0, {mdp.num_actions})")
    return pi


def bellman_operator(q: np.ndarray, mdp: TabularMdp) -> np.ndarray:
    """``(TQ)(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) max_a' Q(s',a')``."""
    q = _check_q(q, mdp)
    return mdp.reward + mdp.discount * (mdp.transition @ q.max(axis=1))


def default_max_iter(discount: float, tol: float, scale: float = 1.0) -> int:
    return math.ceil(math.log(max(scale, 1.0) / tol) / math.log(1.0 / discount)) + 100


def value_iteration(mdp: TabularMdp, tol: float = 1e-8, max_iter: int | None = None,
                    q0: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Iterate the Bellman operator until ``||TQ - Q||_inf <= tol``.

    Returns ``(Q, iterations)``.  Raises :class:`NotConvergedError` carrying the
    residual if ``max_iter`` sweeps are not enough.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = default_max_iter(mdp.discount, tol, float(np.abs(mdp.reward).max()))
    q = np.zeros_like(mdp.reward) if q0 is None else _check_q(q0, mdp).copy()
    residual = math.inf
    for k in range(1, max_iter + 1):
        q_next = bellman_operator(q, mdp)
        residual = float(np.max(np.abs(q_next - q)))
        q = q_next
        if residual <= tol:
            return q, k
    raise NotConvergedError(f"value iteration did not reach tol={tol} in {max_iter} sweeps "
                            f"(residual {residual:.3e})", residual, q, max_iter)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Greedy decision rule; ties go to the lowest action index."""
    q = np.asarray(q, dtype=float)
    return np.argmax(q, axis=1)


def policy_values(mdp: TabularMdp, policy: Sequence[int]) -> np.ndarray:
    """State values ``V^pi`` from the linear system ``(I - gamma P_pi) V = R_pi``."""
    pi = _check_policy(policy, mdp)
    states = np.arange(mdp.num_states)
    P_pi = mdp.transition[states, pi]
    R_pi = mdp.reward[states, pi]
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * P_pi, R_pi)


def policy_evaluation(mdp: TabularMdp, policy: Sequence[int], tol: float = 1e-8) -> np.ndarray:
    """Q-function of a fixed deterministic policy.

    Solved directly, so the Bellman residual is at round-off level, far
    inside ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = policy_values(mdp, policy)
    return mdp.reward + mdp.discount * (mdp.transition @ v)


def policy_iteration(mdp: TabularMdp, tol: float = 1e-8, max_iter: int = 10_000,
                     history: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Alternate exact evaluation and greedy improvement until the policy is stable.

    An action is only replaced when the improvement exceeds a round-off
    margin, which rules out cycling between tied actions.  If ``history`` is
    given, each ``(policy, Q)`` evaluation is appended to it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    states = np.arange(mdp.num_states)
    pi = greedy_policy(mdp.reward)
    margin = 1e-12 * max(1.0, float(np.abs(mdp.reward).max())) / (1 - mdp.discount)
    for _ in range(max_iter):
        q = policy_evaluation(mdp, pi, tol)
        if history is not None:
            history.append((pi, q))
        candidate = greedy_policy(q)
        improve = q[states, candidate] > q[states, pi] + margin
        if not improve.any():
            return pi, q
        pi = np.where(improve, candidate, pi)
    raise NotConvergedError("policy iteration did not stabilise", math.nan, q, max_iter)


def deterministic_policies(num_states: int, num_actions: int) -> Iterable[np.ndarray]:
    """All ``A**S`` deterministic stationary policies."""
    for combo in itertools.product(range(num_actions), repeat=num_states):
        yield np.array(combo, dtype=int)


def finite_horizon_dp(mdp: TabularMdp, horizon: int, rewards: np.ndarray | None = None,
                      terminal_mask: Iterable[tuple[int, int]] | np.ndarray | None = None,
                      initial_state: int | None = None) -> list[np.ndarray]:
    """Backward recursion for an undiscounted ``horizon``-step problem.

    Returns ``[Q_0, ..., Q_{horizon-1}]`` where ``Q_t`` is the value of
    playing ``(x, u)`` at step ``t`` and acting optimally until the end.  The
    last table is the terminal reward.  ``rewards`` may be ``(S, A)`` or
    time-indexed ``(horizon, S, A)``; it defaults to ``mdp.reward``.

    ``terminal_mask`` lists the (state, action) pairs allowed at the last
    step; every other terminal pair gets :data:`INFEASIBLE`, which then
    propagates backwards.  The discount factor is not used.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    S, A = mdp.num_states, mdp.num_actions
    R = mdp.reward if rewards is None else np.asarray(rewards, dtype=float)
    if R.shape == (S, A):
        R = np.broadcast_to(R, (horizon, S, A))
    elif R.shape != (horizon, S, A):
        raise DimensionError(f"rewards must have shape {(S, A)} or {(horizon, S, A)}, got {R.shape}")

    q = R[-1].copy()
    if terminal_mask is not None:
        allowed = np.zeros((S, A), dtype=bool)
        if isinstance(terminal_mask, np.ndarray) and terminal_mask.dtype == bool:
            allowed[:] = terminal_mask
        else:
            for s, a in terminal_mask:
                allowed[s, a] = True
        q[~allowed] = INFEASIBLE

    tables = [q]
    P = mdp.transition
    for t in range(horizon - 2, -1, -1):
        v = tables[0].max(axis=1)
        feasible = np.isfinite(v)
        ev = P @ np.where(feasible, v, 0.0)
        touches_infeasible = (P[:, :, ~feasible] > 0).any(axis=2)
        ev[touches_infeasible] = INFEASIBLE
        tables.insert(0, R[t] + ev)

    if initial_state is not None and not np.isfinite(tables[0][initial_state]).any():
        raise InfeasibleError(initial_state, 0)
    return tables


def support_reachable(mdp: TabularMdp, start: int, steps: int, targets: Iterable[int]) -> bool:
    """Whether some action sequence can force the state into ``targets`` in exactly ``steps`` moves.

    "Force" means every successor with positive probability keeps the
    target reachable, i.e. reachability that holds for every disturbance
    realisation.  Computed backwards over the support graph.
    """
    S = mdp.num_states
    good = np.zeros(S, dtype=bool)
    good[list(targets)] = True
    support = mdp.transition > 0
    for _ in range(steps):
        # state is good if some action keeps all support inside good
        good = (~support | good[None, None, :]).all(axis=2).any(axis=1)
    return bool(good[start])


def reachable_states(mdp: TabularMdp, start: int) -> set[int]:
    """Breadth-first search over the transition support graph."""
    seen = {start}
    queue = deque([start])
    support = mdp.transition > 0
    while queue:
        s = queue.popleft()
        for nxt in np.flatnonzero(support[s].any(axis=0)):
            if int(nxt) not in seen:
                seen.add(int(nxt))
                queue.append(int(nxt))
    return seen


def two_state_example(discount: float = 0.5) -> TabularMdp:
    """States {0, 1}; action 0 stays, action 1 switches; reward equals the state index."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    P[0, 1, 1] = P[1, 1, 0] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMdp(P, R, discount)


def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int, discount: float,
               deterministic: bool = False) -> TabularMdp:
    R = rng.random((num_states, num_actions))
    if deterministic:
        P = np.zeros((num_states, num_actions, num_states))
        nxt = rng.integers(num_states, size=(num_states, num_actions))
        P[np.arange(num_states)[:, None], np.arange(num_actions)[None, :], nxt] = 1.0
    else:
        P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    return TabularMdp(P, R, discount)


MACHINE_STATES = 10
USE, REPAIR = 0, 1


def geometric_decay_profile(ratio: float = 0.5) -> np.ndarray:
    """``P(i | j)`` proportional to ``ratio**(j - i)`` for ``i <= j``."""
    D = np.zeros((MACHINE_STATES, MACHINE_STATES))
    for j in range(MACHINE_STATES):
        w = ratio ** (j - np.arange(j + 1))
        D[j, : j + 1] = w / w.sum()
    return D


def uniform_decay_profile() -> np.ndarray:
    D = np.zeros((MACHINE_STATES, MACHINE_STATES))
    for j in range(MACHINE_STATES):
        D[j, : j + 1] = 1.0 / (j + 1)
    return D


def machine_repair_instance(decay_profile: np.ndarray | None = None, discount: float = 0.9,
                            repair_reward: float = 0.0) -> TabularMdp:
    """Ten-state machine-repair MDP.

    State index ``j`` (0-based) is repair condition ``j + 1``; index 9 is
    "excellent".  Action :data:`USE` decays according to ``decay_profile``
    (row ``j`` is the next-state distribution, zero above the diagonal) and
    earns ``j / 9``.  Action :data:`REPAIR` resets to index 9 and earns
    ``repair_reward``.
    """
    D = geometric_decay_profile() if decay_profile is None else np.asarray(decay_profile, dtype=float)
    if D.shape != (MACHINE_STATES, MACHINE_STATES):
        raise DimensionError(f"decay profile must be {MACHINE_STATES}x{MACHINE_STATES}")
    if np.any(D < 0) or np.max(np.abs(D.sum(axis=1) - 1)) > PROB_ATOL:
        raise ValueError("decay profile rows must be probability distributions")
    if np.any(np.triu(D, k=1) != 0):
        raise ValueError("decay profile must satisfy P(i|j) = 0 for i > j")
    P = np.zeros((MACHINE_STATES, 2, MACHINE_STATES))
    P[:, USE, :] = D
    P[:, REPAIR, MACHINE_STATES - 1] = 1.0
    R = np.zeros((MACHINE_STATES, 2))
    R[:, USE] = np.arange(MACHINE_STATES) / (MACHINE_STATES - 1)
    R[:, REPAIR] = repair_reward
    lo = min(0.0, repair_reward)
    return TabularMdp(P, R, discount, reward_range=(lo, 1.0))
