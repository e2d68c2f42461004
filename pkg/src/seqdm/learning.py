"""Learning with an unknown model: certainty-equivalent estimation,
Q-learning and SARSA(lambda), plus the model-error bound."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .mdp import TabularMdp, greedy_policy, policy_values, value_iteration

DIVERGENCE_GUARD = 1e8


class TransitionSampler(Protocol):
    def __call__(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float]: ...


class MdpSampler:
    """Draws ``(s', r)`` from a known :class:`TabularMdp`.

    Rewards are the deterministic table entries unless ``reward_noise`` is
    set, in which case zero-mean Gaussian noise is added.
    """

    def __init__(self, mdp: TabularMdp, reward_noise: float = 0.0):
        self.mdp = mdp
        self.reward_noise = reward_noise
        cdf = np.cumsum(mdp.transition, axis=2)
        cdf[:, :, -1] = 1.0
        self._cdf = cdf.tolist()
        self._reward = mdp.reward.tolist()
        self._last = mdp.num_states - 1

    def __call__(self, state, action, rng):
        nxt = min(bisect.bisect_right(self._cdf[state][action], rng.random()), self._last)
        r = self._reward[state][action]
        if self.reward_noise:
            r += self.reward_noise * rng.standard_normal()
        return nxt, r


def estimate_mdp(sampler: TransitionSampler, n_per_pair: int, num_states: int, num_actions: int,
                 discount: float, rng: np.random.Generator, reward_mode: str = "mean",
                 known_reward: np.ndarray | None = None) -> TabularMdp:
    """Certainty-equivalent model from ``n_per_pair`` draws of every (s, a).

    ``reward_mode="mean"`` uses sample-mean rewards; ``"known"`` takes
    ``known_reward`` as given and only estimates transitions.
    """
    if n_per_pair < 1:
        raise ValueError("n_per_pair must be at least 1")
    if reward_mode not in ("mean", "known"):
        raise ValueError(f"unknown reward_mode {reward_mode!r}")
    if reward_mode == "known" and known_reward is None:
        raise ValueError("reward_mode='known' needs known_reward")
    counts = np.zeros((num_states, num_actions, num_states))
    reward_sum = np.zeros((num_states, num_actions))
    for s in range(num_states):
        for a in range(num_actions):
            for _ in range(n_per_pair):
                nxt, r = sampler(s, a, rng)
                if not 0 <= nxt < num_states:
                    raise ValueError(f"sampler returned state {nxt} outside [0, {num_states}) for pair ({s}, {a})")
                counts[s, a, nxt] += 1
                reward_sum[s, a] += r
    P = counts / n_per_pair
    R = reward_sum / n_per_pair if reward_mode == "mean" else np.asarray(known_reward, dtype=float)
    lo, hi = float(R.min()), float(R.max())
    return TabularMdp(P, R, discount, reward_range=(min(0.0, lo), max(1.0, hi)))


def _optimal(mdp: TabularMdp) -> tuple[np.ndarray, np.ndarray]:
    q, _ = value_iteration(mdp, tol=1e-12)
    pi = greedy_policy(q)
    return pi, policy_values(mdp, pi)


def model_error_bound(true_mdp: TabularMdp, hat_mdp: TabularMdp) -> tuple[float, float]:
    """Both sides of the model-error inequality.

    ``lhs = max_x V*(x) - V^{pi_hat}(x)`` where ``pi_hat`` is greedy for the
    model with ``hat_mdp``'s transitions and the true rewards;
    ``rhs = 2 gamma / (1 - gamma)^2 * max_{x,u} |E_hat[V*] - E[V*]|``.
    """
    if true_mdp.transition.shape != hat_mdp.transition.shape:
        raise ValueError("MDPs have different dimensions")
    if true_mdp.discount != hat_mdp.discount:
        raise ValueError("MDPs have different discount factors")
    gamma = true_mdp.discount
    hat = true_mdp.replace(transition=hat_mdp.transition)
    pi_star, v_star = _optimal(true_mdp)
    pi_hat = greedy_policy(value_iteration(hat, tol=1e-12)[0])
    if np.array_equal(pi_hat, pi_star):
        lhs = 0.0
    else:
        lhs = float(np.max(v_star - policy_values(true_mdp, pi_hat)))
    gap = np.abs(hat.transition @ v_star - true_mdp.transition @ v_star)
    rhs = 2 * gamma / (1 - gamma) ** 2 * float(gap.max())
    return lhs, rhs


def sample_complexity_envelope(num_states: int, num_actions: int, discount: float, total_samples: int,
                               delta: float) -> float:
    """``2 gamma / (1 - gamma)^3 * sqrt(S A log(2 S A / delta) / N)``."""
    SA = num_states * num_actions
    return 2 * discount / (1 - discount) ** 3 * math.sqrt(SA * math.log(2 * SA / delta) / total_samples)


def certainty_equivalence_gap(true_mdp: TabularMdp, n_per_pair: int, rng: np.random.Generator) -> float:
    """``max_x V*(x) - V^{pi_hat}(x)`` for the policy planned on an estimated model (rewards known)."""
    est = estimate_mdp(MdpSampler(true_mdp), n_per_pair, true_mdp.num_states, true_mdp.num_actions,
                       true_mdp.discount, rng, reward_mode="known", known_reward=true_mdp.reward)
    _, v_star = _optimal(true_mdp)
    pi_hat = greedy_policy(value_iteration(est, tol=1e-12)[0])
    return float(np.max(v_star - policy_values(true_mdp, pi_hat)))


# ---- Q-learning -------------------------------------------------------------

SCHEDULES = ("constant", "1/k", "1/visit")


@dataclass
class QLearningResult:
    q: np.ndarray
    visits: np.ndarray
    steps: int
    schedule: str
    seed: int | None = None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "steps": self.steps, "schedule": self.schedule,
                "q": self.q.tolist(), "visits": self.visits.tolist()}


def q_learning(sampler: TransitionSampler, num_states: int, num_actions: int, discount: float, steps: int,
               rng: np.random.Generator, schedule: str = "1/visit", step_size: float = 0.1,
               epsilon: float = 0.1, start_state: int = 0, q0: np.ndarray | None = None,
               seed: int | None = None) -> QLearningResult:
    """Tabular Q-learning along one epsilon-greedy trajectory.

    Update: ``Q(s,a) <- (1 - eta) Q(s,a) + eta (r + gamma max_a' Q(s',a'))``.
    ``schedule`` picks ``eta``: ``"constant"`` (``step_size``), ``"1/k"``
    (global step count) or ``"1/visit"`` (visits to ``(s, a)``).
    """
    if schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES}")
    if schedule == "constant" and not step_size > 0:
        raise ValueError("step_size must be positive")
    q = np.zeros((num_states, num_actions)) if q0 is None else np.array(q0, dtype=float)
    rows = q.tolist()
    visits = [[0] * num_actions for _ in range(num_states)]
    s = start_state
    chunk = 4096
    for k in range(1, steps + 1):
        i = (k - 1) % chunk
        if i == 0:
            u_explore = rng.random(min(chunk, steps - k + 1)).tolist()
            u_action = rng.integers(num_actions, size=min(chunk, steps - k + 1)).tolist()
        row = rows[s]
        if u_explore[i] < epsilon:
            a = u_action[i]
        else:
            a = row.index(max(row))
        nxt, r = sampler(s, a, rng)
        visits[s][a] += 1
        if schedule == "constant":
            eta = step_size
        elif schedule == "1/k":
            eta = 1.0 / k
        else:
            eta = 1.0 / visits[s][a]
        row[a] = (1 - eta) * row[a] + eta * (r + discount * max(rows[nxt]))
        s = nxt
    return QLearningResult(np.array(rows), np.array(visits, dtype=np.int64), steps, schedule, seed)


# ---- SARSA(lambda) ------------------------------------------------------------

@dataclass
class LinearQApprox:
    weights: np.ndarray
    featurizer: Callable[[int, int], np.ndarray]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)

    def features(self, state: int, action: int) -> np.ndarray:
        phi = np.asarray(self.featurizer(state, action), dtype=float)
        if phi.shape != self.weights.shape:
            raise ValueError(f"feature length {phi.shape} does not match weights {self.weights.shape}")
        return phi

    def value(self, state: int, action: int) -> float:
        return float(self.weights @ self.features(state, action))


def one_hot_featurizer(num_states: int, num_actions: int) -> Callable[[int, int], np.ndarray]:
    eye = np.eye(num_states * num_actions)
    return lambda s, a: eye[s * num_actions + a]


@dataclass
class SarsaResult:
    approx: LinearQApprox
    trace: np.ndarray
    steps: int
    diverged: bool = False

    def to_dict(self, seed: int | None = None) -> dict:
        return {"seed": seed, "steps": self.steps, "diverged": self.diverged,
                "weights": self.approx.weights.tolist()}


def epsilon_greedy(num_actions: int, epsilon: float):
    def policy(state, approx, rng):
        if rng.random() < epsilon:
            return int(rng.integers(num_actions))
        values = [approx.value(state, a) for a in range(num_actions)]
        return values.index(max(values))
    return policy


def sarsa_lambda(sampler: TransitionSampler, approx: LinearQApprox, discount: float, lam: float, eta: float,
                 steps: int, rng: np.random.Generator, policy=None, num_actions: int | None = None,
                 epsilon: float = 0.1, start_state: int = 0, episode_length: int | None = None,
                 guard: float = DIVERGENCE_GUARD) -> SarsaResult:
    """On-policy SARSA(lambda) with linear function approximation.

    ``delta_t = r + gamma Q(s', a') - Q(s, a)``, ``e_t = lam e_{t-1} + grad Q(s, a)``,
    ``theta += eta delta_t e_t``.  ``policy(state, approx, rng)`` picks actions;
    the default is epsilon-greedy over ``num_actions``.  When
    ``episode_length`` is set the trace and state are reset after that many
    steps.  If ``||theta||`` exceeds ``guard`` the run stops and is reported
    as diverged.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if policy is None:
        if num_actions is None:
            raise ValueError("need a policy or num_actions")
        policy = epsilon_greedy(num_actions, epsilon)
    approx = LinearQApprox(approx.weights.copy(), approx.featurizer)
    trace = np.zeros_like(approx.weights)
    s = start_state
    a = policy(s, approx, rng)
    for t in range(1, steps + 1):
        nxt, r = sampler(s, a, rng)
        a_next = policy(nxt, approx, rng)
        phi = approx.features(s, a)
        delta = r + discount * approx.value(nxt, a_next) - approx.weights @ phi
        trace = lam * trace + phi
        approx.weights = approx.weights + eta * delta * trace
        if not np.all(np.isfinite(approx.weights)) or np.linalg.norm(approx.weights) > guard:
            return SarsaResult(approx, trace, t, diverged=True)
        if episode_length and t % episode_length == 0 and t < steps:
            trace = np.zeros_like(trace)
            s = start_state
            a = policy(s, approx, rng)
        else:
            s, a = nxt, a_next
    return SarsaResult(approx, trace, steps)
