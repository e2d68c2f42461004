"""Multi-armed and contextual bandits with pseudo-regret accounting.

Every simulator draws rewards from a per-run "reward stack": entry
``[n, k]`` is the reward of the ``n``-th pull of arm ``k``.  The stack is
generated up front from the run's generator, so runs are reproducible and
the vectorised UCB path sees exactly the same rewards as the scalar one.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

RIDGE_FALLBACK = 1e-8
FAMILIES = ("bernoulli", "gaussian")


@dataclass(frozen=True)
class BanditInstance:
    """Arms with means in [0, 1].

    ``family="gaussian"`` draws ``mu + noise * N(0, 1)`` truncated
    symmetrically to ``[mu - w, mu + w]`` with ``w = min(mu, 1 - mu)`` (by
    rejection), which keeps both the mean and the [0, 1] support.
    """

    means: np.ndarray
    family: str = "bernoulli"
    noise: float = 0.1

    def __post_init__(self):
        mu = np.array(self.means, dtype=float).ravel()
        if mu.size == 0:
            raise ValueError("need at least one arm")
        if np.any((mu < 0) | (mu > 1)) or not np.all(np.isfinite(mu)):
            raise ValueError("arm means must lie in [0, 1]")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        mu.setflags(write=False)
        object.__setattr__(self, "means", mu)

    @property
    def K(self) -> int:
        return self.means.size

    @property
    def gaps(self) -> np.ndarray:
        return self.means.max() - self.means

    @property
    def best_arms(self) -> np.ndarray:
        return np.flatnonzero(self.gaps == 0)

    def reward_stack(self, T: int, rng: np.random.Generator) -> np.ndarray:
        """``(T, K)`` array of rewards for pulls ``0..T-1`` of each arm."""
        if self.family == "bernoulli":
            return (rng.random((T, self.K)) < self.means).astype(float)
        width = np.minimum(self.means, 1 - self.means)
        out = np.empty((T, self.K))
        todo = np.ones((T, self.K), dtype=bool)
        while todo.any():
            z = self.noise * rng.standard_normal(int(todo.sum()))
            cols = np.nonzero(todo)[1]
            ok = np.abs(z) <= width[cols]
            idx = tuple(i[ok] for i in np.nonzero(todo))
            out[idx] = self.means[cols[ok]] + z[ok]
            todo[idx] = False
        return out


@dataclass(frozen=True)
class RegretCurve:
    """Arm choices and per-step regret of one run (``t = 1..T``)."""

    arms: np.ndarray
    instantaneous: np.ndarray
    info: dict = field(default_factory=dict)

    @classmethod
    def from_arms(cls, instance: BanditInstance, arms, **info) -> "RegretCurve":
        arms = np.asarray(arms, dtype=np.int64)
        return cls(arms, instance.gaps[arms], dict(info))

    @property
    def T(self) -> int:
        return self.arms.size

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.instantaneous)

    @property
    def regret(self) -> float:
        return float(self.instantaneous.sum())

    def csv_rows(self, seed) -> list[tuple]:
        cum = self.cumulative
        return [(seed, t + 1, int(a), float(g), float(c))
                for t, (a, g, c) in enumerate(zip(self.arms, self.instantaneous, cum))]


def write_regret_csv(curves: list[tuple[int, RegretCurve]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "t", "arm", "instantaneous_gap", "cumulative_regret"])
    for seed, curve in curves:
        w.writerows(curve.csv_rows(seed))
    return buf.getvalue()


# ---- explore-then-commit ------------------------------------------------------

def m_star(gap: float, T: int) -> int:
    """``max(ceil(4 / gap^2 * log(T gap^2 / 4)), 0)``; zero means fall back to a random arm."""
    if not gap > 0:
        raise ValueError("gap must be positive")
    if gap > 1:
        raise ValueError("gap must be at most 1")
    if T < 1:
        raise ValueError("T must be at least 1")
    return max(math.ceil(4 / gap**2 * math.log(T * gap**2 / 4)), 0)


def etc_gap_bound(gap: float, T: int) -> float:
    """``gap + (4 / gap) (log(T gap^2 / 4) + 1)``."""
    return gap + 4 / gap * (math.log(T * gap**2 / 4) + 1)


def run_etc(instance: BanditInstance, m: int, T: int, rng: np.random.Generator) -> RegretCurve:
    """Pull arms ``0..K-1`` in turn ``m`` times each, then commit to the empirical best.

    ``m = 0`` commits to a uniformly random arm (flagged in ``info``).
    """
    K = instance.K
    if m < 0:
        raise ValueError("m must be non-negative")
    if m * K > T:
        raise ValueError(f"exploration needs m*K = {m * K} pulls but T = {T}")
    stack = instance.reward_stack(max(m, 1), rng)
    if m == 0:
        committed = int(rng.integers(K))
    else:
        committed = int(np.argmax(stack[:m].mean(axis=0)))
    arms = np.concatenate([np.tile(np.arange(K), m), np.full(T - m * K, committed)])
    return RegretCurve.from_arms(instance, arms, committed=committed, m=m, fallback=m == 0)


# ---- successive elimination -------------------------------------------------------

def elimination_schedule(T: int) -> tuple[int, list[int]]:
    """``B = floor(log2(T / e) / 2)`` and ``m_l = ceil(2^(2l+1) log(T / 4^l))`` for ``l = 1..B``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    B = math.floor(0.5 * math.log2(T / math.e))
    return max(B, 0), [math.ceil(2 ** (2 * l + 1) * math.log(T / 4**l)) for l in range(1, B + 1)]


@dataclass(frozen=True)
class EliminationResult:
    curve: RegretCurve
    active_history: list[tuple[int, ...]]
    rounds_completed: int
    uniform_fallback: bool = False


def successive_elimination(instance: BanditInstance, T: int, rng: np.random.Generator,
                           mode: str = "literal") -> EliminationResult:
    """Successive elimination with the theorem's schedule.

    In round ``l`` every active arm is pulled ``m_l`` times (round robin) and
    arm ``j`` is dropped when ``mu_j + 2^-l < max_k mu_k``.  ``mode="literal"``
    uses means from the current round only; ``"cumulative"`` uses all pulls
    so far.  After ``B`` rounds the empirical best active arm is played until
    ``T``.  Runs stop at exactly ``T`` pulls, mid-round if need be.
    ``active_history[0]`` is the initial set, then one entry per round.
    """
    if mode not in ("literal", "cumulative"):
        raise ValueError("mode must be 'literal' or 'cumulative'")
    K = instance.K
    B, schedule = elimination_schedule(T)
    stack = instance.reward_stack(T, rng)
    if B < 1:
        arms = np.arange(T) % K
        return EliminationResult(RegretCurve.from_arms(instance, arms, warning="B < 1: uniform play"),
                                 [tuple(range(K))], 0, uniform_fallback=True)
    counts = np.zeros(K, dtype=np.int64)
    active = list(range(K))
    history = [tuple(active)]
    arms: list[int] = []
    means = np.zeros(K)
    rounds = 0
    for ell, m in enumerate(schedule, start=1):
        start = counts.copy()
        for _ in range(m):
            for k in active:
                if len(arms) == T:
                    break
                arms.append(k)
                counts[k] += 1
        if len(arms) == T and np.any(counts[active] - start[active] < m):
            break
        lo = start if mode == "literal" else np.zeros(K, dtype=np.int64)
        means = np.array([stack[lo[k]:counts[k], k].mean() if counts[k] > lo[k] else -np.inf
                          for k in range(K)])
        best = max(means[k] for k in active)
        active = [k for k in active if not means[k] + 2.0**-ell < best]
        history.append(tuple(active))
        rounds = ell
        if len(arms) == T:
            break
    if len(arms) < T:
        committed = max(active, key=lambda k: (means[k], -k))
        arms.extend([committed] * (T - len(arms)))
    curve = RegretCurve.from_arms(instance, arms, mode=mode, B=B, schedule=schedule)
    return EliminationResult(curve, history, rounds)


# ---- UCB ------------------------------------------------------------------------------

def ucb_index(mean, pulls, delta: float):
    """``mean + sqrt(2 log(1/delta) / pulls)``; ``+inf`` for unpulled arms."""
    mean = np.asarray(mean, dtype=float)
    pulls = np.asarray(pulls, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        bonus = np.sqrt(2 * math.log(1 / delta) / pulls)
        out = np.where(pulls > 0, mean + bonus, np.inf)
    return out if out.ndim else float(out)


def run_ucb_batch(instance: BanditInstance, T: int, rngs: list[np.random.Generator],
                  delta: float | None = None, chunk: int = 64) -> np.ndarray:
    """Arm choices ``(len(rngs), T)`` of independent UCB runs, vectorised across runs."""
    delta = 1 / T if delta is None else delta
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    K = instance.K
    out = np.empty((len(rngs), T), dtype=np.int64)
    for lo in range(0, len(rngs), chunk):
        group = rngs[lo:lo + chunk]
        n = len(group)
        stacks = np.stack([instance.reward_stack(T, r) for r in group])
        rows = np.arange(n)
        counts = np.zeros((n, K), dtype=np.int64)
        sums = np.zeros((n, K))
        log_term = 2 * math.log(1 / delta)
        for t in range(T):
            if t < K:
                k = np.full(n, t)
            else:
                k = np.argmax(sums / counts + np.sqrt(log_term / counts), axis=1)
            sums[rows, k] += stacks[rows, counts[rows, k], k]
            counts[rows, k] += 1
            out[lo + rows, t] = k
    return out


def run_ucb(instance: BanditInstance, T: int, rng: np.random.Generator, delta: float | None = None) -> RegretCurve:
    """UCB with Hoeffding bounds; ``delta`` defaults to ``1/T``; ties go to the lowest index."""
    arms = run_ucb_batch(instance, T, [rng], delta)[0]
    return RegretCurve.from_arms(instance, arms, delta=1 / T if delta is None else delta)


# ---- contextual bandits -------------------------------------------------------------

@dataclass
class ContextualEnv:
    """Contexts from ``context_sampler(rng)``, mean rewards ``reward_fn(x)`` (one per
    action) and additive noise ``noise_sampler(rng)``."""

    context_sampler: Callable[[np.random.Generator], np.ndarray]
    reward_fn: Callable[[np.ndarray], np.ndarray]
    noise_sampler: Callable[[np.random.Generator], float]
    num_actions: int

    def mean_rewards(self, x) -> np.ndarray:
        r = np.asarray(self.reward_fn(x), dtype=float)
        if r.shape != (self.num_actions,):
            raise ValueError(f"reward_fn must return {self.num_actions} values")
        return r

    def noise_self_test(self, rng: np.random.Generator, n: int = 100_000) -> tuple[float, float, bool]:
        """Mean and standard error of ``n`` noise draws, and whether the mean is within 3 SE of 0."""
        w = np.array([self.noise_sampler(rng) for _ in range(n)])
        mean, se = float(w.mean()), float(w.std(ddof=1) / math.sqrt(n))
        return mean, se, abs(mean) <= 3 * se


def linear_contextual_env(theta, noise: float = 0.1) -> ContextualEnv:
    """``R(x, u) = theta[u] . x`` with standard normal contexts and Gaussian noise."""
    theta = np.array(theta, dtype=float)
    d = theta.shape[1]
    return ContextualEnv(lambda rng: rng.standard_normal(d), lambda x: theta @ x,
                         lambda rng: noise * rng.standard_normal(), theta.shape[0])


class RewardModel:
    """Per-action least squares ``R_hat(x, u) = w_u . x``.

    A singular normal matrix gets a ridge term of :data:`RIDGE_FALLBACK`;
    every fit is appended to ``fit_history`` with the regularizer used.
    """

    def __init__(self, num_actions: int, dim: int):
        self.num_actions, self.dim = num_actions, dim
        self.gram = np.zeros((num_actions, dim, dim))
        self.moment = np.zeros((num_actions, dim))
        self.counts = np.zeros(num_actions, dtype=np.int64)
        self.weights = np.zeros((num_actions, dim))
        self.fit_history: list[dict] = []

    def observe(self, x, u: int, r: float) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"context has shape {x.shape}, model expects ({self.dim},)")
        self.gram[u] += np.outer(x, x)
        self.moment[u] += r * x
        self.counts[u] += 1

    def fit(self) -> None:
        ridge = []
        for u in range(self.num_actions):
            G = self.gram[u]
            lam = 0.0
            if np.linalg.matrix_rank(G) < self.dim:
                lam = RIDGE_FALLBACK
            self.weights[u] = np.linalg.solve(G + lam * np.eye(self.dim), self.moment[u])
            ridge.append(lam)
        self.fit_history.append({"n": int(self.counts.sum()), "ridge": ridge})

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"context has shape {x.shape}, model expects ({self.dim},)")
        return self.weights @ x


@dataclass(frozen=True)
class ContextualRun:
    curve: RegretCurve
    prediction_error: np.ndarray
    greedy_steps: np.ndarray

    def reduction_holds(self) -> bool:
        """Regret on greedy steps is at most twice the summed max prediction error, at every prefix."""
        reg = np.cumsum(np.where(self.greedy_steps, self.curve.instantaneous, 0.0))
        bound = np.cumsum(np.where(self.greedy_steps, 2 * self.prediction_error, 0.0))
        return bool(np.all(reg <= bound + 1e-9 * (1 + np.abs(bound))))


def _contextual(env: ContextualEnv, model: RewardModel, T: int, rng: np.random.Generator,
                explore: int, refit_every_step: bool) -> ContextualRun:
    arms = np.empty(T, dtype=np.int64)
    inst = np.empty(T)
    err = np.zeros(T)
    greedy = np.zeros(T, dtype=bool)
    for t in range(T):
        x = env.context_sampler(rng)
        true = env.mean_rewards(x)
        if t < explore:
            u = int(rng.integers(env.num_actions))
        else:
            if refit_every_step or t == explore:
                model.fit()
            pred = model.predict(x)
            u = int(np.argmax(pred))
            err[t] = float(np.max(np.abs(pred - true)))
            greedy[t] = True
        r = true[u] + env.noise_sampler(rng)
        if t < explore or refit_every_step:
            model.observe(x, u, r)
        arms[t] = u
        inst[t] = true.max() - true[u]
    return ContextualRun(RegretCurve(arms, inst), err, greedy)


def contextual_etc(env: ContextualEnv, model: RewardModel, m: int, T: int,
                   rng: np.random.Generator) -> ContextualRun:
    """``m`` uniformly random actions, one least-squares fit, then greedy on that fit."""
    if not 0 <= m <= T:
        raise ValueError("need 0 <= m <= T")
    if m < model.dim:
        warnings.warn(f"m={m} is below the {model.dim} parameters per action; the fit is not identifiable",
                      stacklevel=2)
    return _contextual(env, model, T, rng, explore=m, refit_every_step=False)


def contextual_greedy(env: ContextualEnv, model: RewardModel, T: int, rng: np.random.Generator) -> ContextualRun:
    """Refit on the full history every round and act greedily (ties to the lowest index)."""
    return _contextual(env, model, T, rng, explore=0, refit_every_step=True)
