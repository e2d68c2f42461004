"""Derivative-free policy search: REINFORCE over parametric densities and
pure random search with the two-point estimator."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .learning import DIVERGENCE_GUARD

Reward = Callable[[np.ndarray], float]


class ParametricDensity(Protocol):
    def sample(self, theta: np.ndarray, rng: np.random.Generator): ...

    def score(self, z, theta: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianDensity:
    """``N(theta, cov)``; score ``cov^-1 (z - theta)``."""

    cov: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        if cov.shape[0] != cov.shape[1] or np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be symmetric positive definite")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))
        object.__setattr__(self, "_prec", np.linalg.inv(cov))

    @classmethod
    def isotropic(cls, dim: int, variance: float = 1.0) -> "GaussianDensity":
        return cls(variance * np.eye(dim))

    def sample(self, theta, rng):
        return np.asarray(theta, dtype=float) + self._chol @ rng.standard_normal(self.cov.shape[0])

    def score(self, z, theta):
        return self._prec @ (np.asarray(z, dtype=float) - np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class CategoricalDensity:
    """Softmax over logits ``theta``; score ``onehot(z) - softmax(theta)``."""

    @staticmethod
    def probs(theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        e = np.exp(t - t.max())
        return e / e.sum()

    def sample(self, theta, rng):
        return int(rng.choice(len(theta), p=self.probs(theta)))

    def score(self, z, theta):
        g = -self.probs(theta)
        g[z] += 1.0
        return g


@dataclass(frozen=True)
class GradientEstimate:
    value: np.ndarray
    se: np.ndarray
    used: int
    rejected: int


def _estimate(samples: list[np.ndarray], rejected: int) -> GradientEstimate:
    if not samples:
        raise ValueError("every sample was rejected (non-finite reward)")
    G = np.array(samples)
    se = G.std(axis=0, ddof=1) / math.sqrt(len(G)) if len(G) > 1 else np.zeros(G.shape[1])
    return GradientEstimate(G.mean(axis=0), se, len(G), rejected)


def reinforce_gradient(density: ParametricDensity, R: Reward, theta, batch: int,
                       rng: np.random.Generator) -> GradientEstimate:
    """Batch mean of ``R(z) grad log p(z; theta)``; non-finite ``R(z)`` samples are dropped and counted."""
    if batch < 1:
        raise ValueError("batch must be at least 1")
    theta = np.asarray(theta, dtype=float)
    samples, rejected = [], 0
    for _ in range(batch):
        z = density.sample(theta, rng)
        r = float(R(z))
        if not math.isfinite(r):
            rejected += 1
            continue
        samples.append(r * density.score(z, theta))
    return _estimate(samples, rejected)


@dataclass(frozen=True)
class SearchTrace:
    thetas: np.ndarray
    rewards: np.ndarray
    step_sizes: np.ndarray
    seed: int | None = None
    diverged: bool = False

    def __post_init__(self):
        if not len(self.thetas) == len(self.rewards) + 1 == len(self.step_sizes) + 1:
            raise ValueError("trace lengths are inconsistent")

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "reward", "theta_norm", "step_size"])
        for k, (r, a) in enumerate(zip(self.rewards, self.step_sizes)):
            w.writerow([k, float(r), float(np.linalg.norm(self.thetas[k])), float(a)])
        return buf.getvalue()


def _step_size(step_sizes, k: int) -> float:
    if callable(step_sizes):
        a = float(step_sizes(k))
    elif np.ndim(step_sizes) == 0:
        a = float(step_sizes)
    else:
        a = float(step_sizes[k])
    if a < 0:
        raise ValueError("step sizes must be non-negative")
    return a


def reinforce(density: ParametricDensity, R: Reward, theta0, steps: int,
              step_sizes: float | Sequence[float] | Callable[[int], float], rng: np.random.Generator,
              batch: int = 1, seed: int | None = None, guard: float = DIVERGENCE_GUARD) -> SearchTrace:
    """``theta_{k+1} = theta_k + alpha_k * mean_batch R(z) grad log p(z; theta_k)``.

    ``rewards[k]`` is the mean sampled reward at step ``k``.  The run stops
    early, flagged ``diverged``, once ``||theta||`` exceeds ``guard``.
    """
    theta = np.array(theta0, dtype=float)
    thetas, rewards, alphas = [theta.copy()], [], []
    for k in range(steps):
        alpha = _step_size(step_sizes, k)
        samples, total = [], 0.0
        for _ in range(batch):
            z = density.sample(theta, rng)
            r = float(R(z))
            if not math.isfinite(r):
                raise ValueError(f"non-finite reward at step {k}")
            total += r
            samples.append(r * density.score(z, theta))
        theta = theta + alpha * np.mean(samples, axis=0)
        thetas.append(theta.copy())
        rewards.append(total / batch)
        alphas.append(alpha)
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > guard:
            return SearchTrace(np.array(thetas), np.array(rewards), np.array(alphas), seed, diverged=True)
    return SearchTrace(np.array(thetas), np.array(rewards), np.array(alphas), seed)


# ---- random search ----------------------------------------------------------------

DIRECTIONS = ("gaussian", "sphere")


def sample_directions(dim: int, m: int, rng: np.random.Generator, kind: str = "gaussian") -> np.ndarray:
    """``m`` directions with ``E[eps eps^T] = I``; sphere draws are scaled to radius ``sqrt(dim)``."""
    if kind not in DIRECTIONS:
        raise ValueError(f"directions must be one of {DIRECTIONS}")
    eps = rng.standard_normal((m, dim))
    if kind == "sphere":
        eps *= math.sqrt(dim) / np.linalg.norm(eps, axis=1, keepdims=True)
    return eps


def two_point_direction(R: Reward, theta, sigma: float, eps) -> np.ndarray:
    """``(R(theta + sigma eps) - R(theta - sigma eps)) / (2 sigma) * eps``."""
    theta, eps = np.asarray(theta, dtype=float), np.asarray(eps, dtype=float)
    up, down = float(R(theta + sigma * eps)), float(R(theta - sigma * eps))
    if not (math.isfinite(up) and math.isfinite(down)):
        raise FloatingPointError("non-finite reward evaluation")
    return (up - down) / (2 * sigma) * eps


def two_point_estimate(R: Reward, theta, sigma: float, m: int, rng: np.random.Generator,
                       directions: str = "gaussian") -> GradientEstimate:
    """Average of ``m`` two-point estimates; directions with non-finite evaluations are dropped."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if m < 1:
        raise ValueError("m must be at least 1")
    theta = np.asarray(theta, dtype=float)
    samples, rejected = [], 0
    for eps in sample_directions(theta.size, m, rng, directions):
        try:
            samples.append(two_point_direction(R, theta, sigma, eps))
        except FloatingPointError:
            rejected += 1
    return _estimate(samples, rejected)


def random_search(R: Reward, theta0, sigma: float, m: int, alpha: float, steps: int, rng: np.random.Generator,
                  directions: str = "gaussian", seed: int | None = None,
                  guard: float = DIVERGENCE_GUARD) -> SearchTrace:
    """Ascent ``theta_{k+1} = theta_k + alpha g_sigma^(m)(theta_k)``; ``rewards[k] = R(theta_k)``."""
    theta = np.array(theta0, dtype=float)
    thetas, rewards, alphas = [theta.copy()], [], []
    for _ in range(steps):
        rewards.append(float(R(theta)))
        g = two_point_estimate(R, theta, sigma, m, rng, directions).value
        theta = theta + alpha * g
        thetas.append(theta.copy())
        alphas.append(alpha)
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > guard:
            return SearchTrace(np.array(thetas), np.array(rewards), np.array(alphas), seed, diverged=True)
    return SearchTrace(np.array(thetas), np.array(rewards), np.array(alphas), seed)
