"""Named reproduction scenarios, one per acceptance criterion.

Each scenario is deterministic: it fixes its own seeds and returns the
measured quantities together with the pass/fail verdict at its tolerance.
"""
from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import bandits as bd
from . import control as ctl
from . import mdp as M
from . import mpc as mp
from . import search as sr
from .harness import run_experiment
from .learning import MdpSampler, certainty_equivalence_gap, model_error_bound, sample_complexity_envelope
from .stats import mean_se


@dataclass
class ScenarioResult:
    name: str
    criterion: int
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"[{self.criterion:2d}] {self.name}: {'PASS' if self.passed else 'FAIL'} ({shown})"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, np.ndarray):
        return np.array2string(v, precision=6, separator=",").replace("\n", "")
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(str(_short(x)) for x in v) + "]"
    return str(v)


def _philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def newton_gain() -> ScenarioResult:
    sys, cost = ctl.newton_instance()
    K = ctl.riccati_recursion(sys, cost, 200)[0][1]
    eig = np.sort(np.linalg.eigvals(ctl.closed_loop(sys, K)).real)
    err_K = float(np.max(np.abs(K - [[2.0, 3.0]])))
    err_eig = float(np.max(np.abs(eig - [-1.0, 0.0])))
    return ScenarioResult("newton-gain", 1, err_K <= 1e-3 and err_eig <= 1e-6,
                          {"K": K.ravel(), "eigenvalues": eig, "K_err": err_K, "eig_err": err_eig})


def shift_register_fragility() -> ScenarioResult:
    sys, cost = ctl.shift_register_instance(0.0)
    K = ctl.riccati_recursion(sys, cost, 200)[0][1]
    err_K = float(np.max(np.abs(K - [[0.0, -1.0]])))
    rho = {a: ctl.spectral_radius(ctl.closed_loop(sys, K, a * sys.B)) for a in (1.0, 1.01, 1.1)}
    ok = err_K <= 1e-3 and abs(rho[1.0] - 1) <= 1e-9 and rho[1.01] > 1 and rho[1.1] > 1
    return ScenarioResult("shift-register-fragility", 2, ok,
                          {"K": K.ravel(), "rho(1)": rho[1.0], "rho(1.01)": rho[1.01], "rho(1.1)": rho[1.1]})


def lqg_fragility() -> ScenarioResult:
    sys = ctl.lqg_fragility_instance(1e-4)
    L = ctl.kalman_gain(sys).L
    K = ctl.lqr_gain(*ctl.newton_instance())
    rho1 = ctl.spectral_radius(ctl.lqg_closed_loop(sys, K, L, sys.B))
    rho11 = ctl.spectral_radius(ctl.lqg_closed_loop(sys, K, L, 1.1 * sys.B))
    err_L = float(np.max(np.abs(L - [[3.0], [2.0]])))
    return ScenarioResult("lqg-fragility", 3, err_L <= 0.05 and rho1 <= 1 + 1e-6 and rho11 > 1,
                          {"L": L.ravel(), "rho(t=1)": rho1, "rho(t=1.1)": rho11})


def duality() -> ScenarioResult:
    rng = _philox(4)
    worst = 0.0
    for _ in range(50):
        d, p, k = (int(v) for v in rng.integers(1, [5, 3, 3]))
        sys = ctl.random_system(rng, d, p, k)
        L = ctl.kalman_gain(sys).L
        dual_K = ctl.lqr_gain(*ctl.dual_problem(sys))
        worst = max(worst, float(np.max(np.abs(L - dual_K.T))))
    return ScenarioResult("duality", 4, worst <= 1e-8, {"systems": 50, "max_abs_diff": worst})


def ce_curvature() -> ScenarioResult:
    sys, _ = ctl.newton_instance()
    cost = ctl.QuadraticCost(np.eye(2), [[1.0]])
    j_star = ctl.lqr_cost(sys, cost, ctl.lqr_gain(sys, cost))
    dA = np.array([[0.3, -0.2], [0.1, 0.4]])
    dB = np.array([[0.5], [-0.3]])
    eps = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    gaps = []
    for e in eps:
        K_hat = ctl.lqr_gain(ctl.LinearSystem(sys.A + e * dA, sys.B + e * dB), cost)
        gaps.append(ctl.lqr_cost(sys, cost, K_hat) - j_star)
    slope = float(np.polyfit(np.log(eps), np.log(gaps), 1)[0])
    return ScenarioResult("ce-curvature", 5, abs(slope - 2) <= 0.2, {"slope": slope, "gaps": gaps})


def model_error() -> ScenarioResult:
    rng = _philox(6)
    violations, nontrivial = 0, 0
    for _ in range(200):
        S, A = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        true = M.random_mdp(rng, S, A, 0.9)
        eta = rng.uniform(0, 0.1)
        hat = true.replace(transition=(1 - eta) * true.transition + eta * rng.dirichlet(np.ones(S), size=(S, A)))
        lhs, rhs = model_error_bound(true, hat)
        violations += not lhs <= rhs
        nontrivial += lhs > 0
    return ScenarioResult("model-error", 6, violations == 0,
                          {"pairs": 200, "violations": violations, "lhs_positive": nontrivial})


def tabular_oracle() -> ScenarioResult:
    rng = _philox(7)
    grid = [(S, A) for S in range(1, 5) for A in range(1, 3)]
    worst, disagree = 0.0, 0
    for i in range(50):
        S, A = grid[i % len(grid)]
        m = M.random_mdp(rng, S, A, 0.9, deterministic=True)
        q, _ = M.value_iteration(m)
        v_vi = q.max(axis=1)
        v_enum = np.max([M.policy_values(m, pi) for pi in M.deterministic_policies(S, A)], axis=0)
        worst = max(worst, float(np.max(np.abs(v_vi - v_enum))))
        pi_pi, _ = M.policy_iteration(m)
        disagree += not np.array_equal(pi_pi, M.greedy_policy(q))
    return ScenarioResult("tabular-oracle", 7, worst <= 1e-6 and disagree == 0,
                          {"instances": 50, "max_value_err": worst, "argmax_disagreements": disagree})


def etc_bound() -> ScenarioResult:
    inst = bd.BanditInstance([0.5, 0.7])
    T, gap = 10_000, 0.2
    m0 = bd.m_star(gap, T)
    r = [bd.run_etc(inst, m0, T, _philox(s)).regret for s in range(1000)]
    mean, se = mean_se(r)
    m23 = int(round(T ** (2 / 3)))
    r23 = [bd.run_etc(inst, m23, T, _philox(10_000 + s)).regret for s in range(1000)]
    mean23, _ = mean_se(r23)
    ok_dep = mean <= 97.3 + 3 * se
    ok_indep = mean <= gap + 2.5 * math.sqrt(T) + 3 * se
    ok_23 = mean23 <= 2 * T ** (2 / 3)
    return ScenarioResult("etc-bound", 8, m0 == 461 and ok_dep and ok_indep and ok_23,
                          {"m": m0, "mean_regret": mean, "se": se, "gap_bound": 97.3,
                           "printed_formula": bd.etc_gap_bound(gap, T), "m_T23": m23, "mean_regret_T23": mean23})


def successive_elimination() -> ScenarioResult:
    B, sched = bd.elimination_schedule(10_000)
    inst = bd.BanditInstance([0.3, 0.9])
    runs = [bd.successive_elimination(inst, 10_000, _philox(s)) for s in range(500)]
    survival = float(np.mean([1 in r.active_history[-1] for r in runs]))
    return ScenarioResult("successive-elimination", 9, B == 5 and sched[0] == 63 and survival >= 0.9,
                          {"B": B, "m": sched, "best_arm_survival": survival})


def ucb_sublinear() -> ScenarioResult:
    inst = bd.BanditInstance([0.5, 0.7])
    T = 10_000
    r1 = inst.gaps[bd.run_ucb_batch(inst, T, [_philox(s) for s in range(500)])].sum(axis=1).mean()
    r2 = inst.gaps[bd.run_ucb_batch(inst, 2 * T, [_philox(1000 + s) for s in range(500)])].sum(axis=1).mean()
    ratio = float(r2 / r1)
    return ScenarioResult("ucb-sublinear", 10, ratio < 1.9,
                          {"regret_T": float(r1), "regret_2T": float(r2), "ratio": ratio})


def mpc_bound() -> ScenarioResult:
    m = M.machine_repair_instance()
    spec = mp.MpcSpec(m, 5, terminal=(M.MACHINE_STATES - 1, M.USE), r_max=1.0)
    res = mp.mpc_bound_check(spec, MdpSampler(m), 500, 200, _philox(11), x0=M.MACHINE_STATES - 1)
    return ScenarioResult("mpc-bound", 11, res.holds,
                          {"empirical_avg": res.empirical_avg, "half_width": res.half_width,
                           "lower_bound": res.lower_bound, "burn_in": res.burn_in,
                           "residual_reward": res.residual_reward})


def estimator_checks() -> ScenarioResult:
    rng = _philox(12)
    # REINFORCE on a quadratic under a correlated Gaussian
    c = np.array([1.0, -0.5])
    dens = sr.GaussianDensity([[0.3, 0.1], [0.1, 0.2]])
    theta = np.array([0.4, 0.4])

    def R(z):
        return -float((z - c) @ (z - c))

    est = sr.reinforce_gradient(dens, R, theta, 100_000, rng)
    # finite-difference oracle on J(theta) = E[R], common random numbers, per-sample SE
    h, n = 1e-4, 1_000_000
    Z = rng.standard_normal((n, 2)) @ dens._chol.T
    fd, fd_se = np.zeros(2), np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        up = -np.sum((theta + e + Z - c) ** 2, axis=1)
        dn = -np.sum((theta - e + Z - c) ** 2, axis=1)
        d = (up - dn) / (2 * h)
        fd[i], fd_se[i] = d.mean(), d.std(ddof=1) / math.sqrt(n)
    z_reinforce = float(np.max(np.abs(est.value - fd) / np.sqrt(est.se**2 + fd_se**2 + 1e-300)))

    # two-point estimator: unbiased for a linear reward, exact per direction on quadratics
    lin = np.array([1.0, -2.0, 0.5])
    tp = sr.two_point_estimate(lambda t: float(lin @ t), np.zeros(3), 0.3, 100_000, rng)
    z_two_point = float(np.max(np.abs(tp.value - lin) / tp.se))
    worst_exact = 0.0
    for _ in range(200):
        d = 5
        Q = rng.standard_normal((d, d))
        Q = Q + Q.T
        b = rng.standard_normal(d)
        th, eps = rng.standard_normal(d), rng.standard_normal(d)
        g = sr.two_point_direction(lambda t: float(t @ Q @ t / 2 + b @ t), th, float(rng.uniform(0.01, 1)), eps)
        worst_exact = max(worst_exact, float(np.max(np.abs(g - ((Q @ th + b) @ eps) * eps))))
    ok = z_reinforce <= 3 and z_two_point <= 3 and worst_exact <= 1e-12
    return ScenarioResult("estimator-checks", 12, ok,
                          {"reinforce_z": z_reinforce, "two_point_z": z_two_point, "quadratic_max_err": worst_exact})


def sample_complexity() -> ScenarioResult:
    S, A, gamma, n, delta = 5, 2, 0.9, 20, 0.1
    N = S * A * n
    envelope = sample_complexity_envelope(S, A, gamma, N, delta)
    gaps = []
    for seed in range(100):
        rng = _philox(13_000 + seed)
        true = M.random_mdp(rng, S, A, gamma)
        gaps.append(certainty_equivalence_gap(true, n, rng))
    frac = float(np.mean(np.array(gaps) <= envelope))
    return ScenarioResult("sample-complexity", 13, frac >= 0.9,
                          {"envelope": envelope, "max_gap": float(max(gaps)), "fraction_within": frac})


def _determinism_configs() -> list[dict]:
    return [
        {"experiment": "bandit", "seed": 7, "replications": 3, "T": 500,
         "instance": {"means": [0.5, 0.7]}, "algorithm": {"name": "ucb"}},
        {"experiment": "mpc", "seed": 3, "replications": 2, "T": 50, "instance": {},
         "algorithm": {"horizon": 5, "terminal": [9, 0], "r_max": 1.0}},
        {"experiment": "search", "seed": 1, "replications": 2, "T": 50, "instance": {"dim": 3},
         "algorithm": {"method": "random_search"}},
        {"experiment": "mdp", "seed": 5, "replications": 2, "T": 2000, "instance": {"kind": "two_state"},
         "algorithm": {"method": "q_learning"}},
    ]


def determinism() -> ScenarioResult:
    mismatches = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, cfg in enumerate(_determinism_configs()):
            outs = []
            for rep in range(2):
                d = Path(tmp) / f"{i}-{rep}"
                run_experiment(cfg, d)
                outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
            if outs[0] != outs[1]:
                mismatches.append(cfg["experiment"])
    return ScenarioResult("determinism", 14, not mismatches,
                          {"experiments": len(_determinism_configs()), "mismatches": mismatches})


SCENARIOS: dict[str, Callable[[], ScenarioResult]] = {
    "newton-gain": newton_gain,
    "shift-register-fragility": shift_register_fragility,
    "lqg-fragility": lqg_fragility,
    "duality": duality,
    "ce-curvature": ce_curvature,
    "model-error": model_error,
    "tabular-oracle": tabular_oracle,
    "etc-bound": etc_bound,
    "successive-elimination": successive_elimination,
    "ucb-sublinear": ucb_sublinear,
    "mpc-bound": mpc_bound,
    "estimator-checks": estimator_checks,
    "sample-complexity": sample_complexity,
    "determinism": determinism,
}
