"""Seeded experiment runner.

Replication ``i`` of a run with master seed ``s`` draws from
``Generator(Philox(SeedSequence(s).spawn(n)[i]))``.  Reports carry the
per-replication rows, a normal-approximation aggregate, the config hash and
the package version, and are written as one table (CSV or JSON lines) plus
``summary.json``.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from . import __version__
from . import bandits as bd
from . import control as ctl
from . import mdp as M
from . import mpc as mp
from . import search as sr
from .learning import MdpSampler, estimate_mdp, q_learning
from .stats import mean_half_width

OUTPUT_DIR_ENV = "SEQDM_OUTPUT_DIR"
RNG_ALGORITHM = "Philox"
SEED_DERIVATION = "numpy.random.SeedSequence(seed).spawn(replications)[i] -> Generator(Philox)"
EXPERIMENTS = ("mdp", "lqr", "lqg", "mpc", "bandit", "search")
FORMATS = ("csv", "jsonl")


class ConfigError(ValueError):
    """Config failed validation; ``errors`` holds ``(field_path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in errors))


class ExperimentError(RuntimeError):
    pass


# ---- RNG contract ----------------------------------------------------------------

def replication_rngs(seed: int, replications: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(replications)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


# ---- config -------------------------------------------------------------------------

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

_INSTANCE = {
    "mdp": {
        "type": "object",
        "properties": {
            "kind": {"enum": ["two_state", "machine_repair", "random", "inline"]},
            "discount": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "S": {"type": "integer", "minimum": 1}, "A": {"type": "integer", "minimum": 1},
            "instance_seed": {"type": "integer", "minimum": 0},
            "mdp": {"type": "object"},
            "decay_ratio": {"type": "number", "exclusiveMinimum": 0},
            "repair_reward": {"type": "number"},
        },
        "required": ["kind"],
    },
    "lqr": {
        "type": "object",
        "properties": {
            "kind": {"enum": ["newton", "shift_register", "double_integrator", "inline"]},
            "psi": {"type": "number", "minimum": 0},
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "mass": {"type": "number", "exclusiveMinimum": 0},
            "A": _matrix, "B": _matrix, "Phi": _matrix, "Psi": _matrix,
        },
        "required": ["kind"],
    },
    "lqg": {
        "type": "object",
        "properties": {
            "sigma2": {"type": "number", "exclusiveMinimum": 0},
            "mismatch": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        },
    },
    "mpc": {
        "type": "object",
        "properties": {
            "kind": {"enum": ["machine_repair"]},
            "decay_ratio": {"type": "number", "exclusiveMinimum": 0},
            "repair_reward": {"type": "number"},
        },
    },
    "bandit": {
        "type": "object",
        "properties": {
            "means": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
            "family": {"enum": list(bd.FAMILIES)},
            "noise": {"type": "number", "minimum": 0},
        },
        "required": ["means"],
    },
    "search": {
        "type": "object",
        "properties": {
            "kind": {"enum": ["quadratic"]},
            "dim": {"type": "integer", "minimum": 1},
            "target": {"type": "array", "items": {"type": "number"}},
            "target_seed": {"type": "integer", "minimum": 0},
        },
    },
}

_ALGORITHM = {
    "mdp": {
        "type": "object",
        "properties": {
            "method": {"enum": ["value_iteration", "policy_iteration", "q_learning", "certainty_equivalence"]},
            "tol": {"type": "number", "exclusiveMinimum": 0},
            "schedule": {"enum": ["constant", "1/k", "1/visit"]},
            "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
            "step_size": {"type": "number", "exclusiveMinimum": 0},
            "n_per_pair": {"type": "integer", "minimum": 1},
            "x0": {"type": "integer", "minimum": 0},
        },
        "required": ["method"],
    },
    "lqr": {"type": "object", "properties": {"horizon": {"type": "integer", "minimum": 1}}},
    "lqg": {"type": "object", "properties": {}},
    "mpc": {
        "type": "object",
        "properties": {
            "horizon": {"type": "integer", "minimum": 1},
            "terminal": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
            "r_max": {"type": "number"},
            "x0": {"type": "integer", "minimum": 0},
        },
        "required": ["horizon"],
    },
    "bandit": {
        "type": "object",
        "properties": {
            "name": {"enum": ["etc", "successive_elimination", "ucb"]},
            "m": {"oneOf": [{"type": "integer", "minimum": 0}, {"enum": ["m_star", "t_two_thirds"]}]},
            "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "mode": {"enum": ["literal", "cumulative"]},
        },
        "required": ["name"],
    },
    "search": {
        "type": "object",
        "properties": {
            "method": {"enum": ["random_search", "reinforce"]},
            "sigma": {"type": "number", "exclusiveMinimum": 0},
            "m": {"type": "integer", "minimum": 1},
            "alpha": {"type": "number", "minimum": 0},
            "variance": {"type": "number", "exclusiveMinimum": 0},
            "batch": {"type": "integer", "minimum": 1},
            "directions": {"enum": list(sr.DIRECTIONS)},
        },
        "required": ["method"],
    },
}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "replications": {"type": "integer", "minimum": 1},
        "T": {"type": "integer", "minimum": 1},
        "instance": {"type": "object"},
        "algorithm": {"type": "object"},
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "format": {"enum": list(FORMATS)}},
            "additionalProperties": False,
        },
    },
    "required": ["experiment", "seed"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"experiment": {"const": name}}, "required": ["experiment"]},
         "then": {"properties": {"instance": _INSTANCE[name], "algorithm": _ALGORITHM[name]},
                  **({"required": ["T", "instance", "algorithm"]} if name in ("mpc", "bandit", "search")
                     else {})}}
        for name in EXPERIMENTS
    ],
}


def _path(error: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path)


def validate_config(doc: Any) -> dict:
    """Check ``doc`` against :data:`CONFIG_SCHEMA`; raises :class:`ConfigError` listing every violation."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise ConfigError([(_path(e), e.message) for e in errors])
    return doc


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    replications: int = 1
    T: int | None = None
    instance: dict = field(default_factory=dict)
    algorithm: dict = field(default_factory=dict)
    output_dir: str | None = None
    output_format: str = "csv"
    name: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        validate_config(doc)
        out = doc.get("output", {})
        return cls(experiment=doc["experiment"], seed=doc["seed"], replications=doc.get("replications", 1),
                   T=doc.get("T"), instance=copy.deepcopy(doc.get("instance", {})),
                   algorithm=copy.deepcopy(doc.get("algorithm", {})), output_dir=out.get("dir"),
                   output_format=out.get("format", "csv"), name=doc.get("name"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError([("$", f"config file not found: {p}")])
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError([("$", f"{p} is not valid JSON: {err}")]) from err
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {"experiment": self.experiment, "seed": self.seed, "replications": self.replications,
               "instance": self.instance, "algorithm": self.algorithm}
        if self.T is not None:
            doc["T"] = self.T
        if self.name is not None:
            doc["name"] = self.name
        return doc

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# ---- reports ---------------------------------------------------------------------------

@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[tuple]

    def render(self, fmt: str = "csv") -> str:
        if fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(self.columns)
            w.writerows(self.rows)
            return buf.getvalue()
        if fmt == "jsonl":
            return "".join(json.dumps(dict(zip(self.columns, r))) + "\n" for r in self.rows)
        raise ValueError(f"format must be one of {FORMATS}")


@dataclass
class Report:
    """Per-replication ``rows`` plus the aggregate of ``rows[*][metric]``."""

    experiment: str
    metric: str
    rows: list[dict]
    config_hash: str
    summary: dict = field(default_factory=dict)
    table: Table | None = None
    version: str = __version__

    @property
    def aggregate(self) -> dict:
        values = [r[self.metric] for r in self.rows]
        mean, hw = mean_half_width(values)
        return {"metric": self.metric, "mean": mean, "half_width": hw, "n": len(values)}

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "aggregate": self.aggregate, "rows": self.rows,
                "summary": self.summary,
                "provenance": {"config_hash": self.config_hash, "version": self.version,
                               "rng": {"algorithm": RNG_ALGORITHM, "numpy": np.__version__,
                                       "derivation": SEED_DERIVATION}}}

    def to_json(self) -> str:
        return json.dumps(to_plain(self.to_dict()), indent=2, sort_keys=True) + "\n"


def to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def resolve_output_dir(config: ExperimentConfig, override: str | None = None) -> Path:
    """``override`` (CLI flag) beats ``$SEQDM_OUTPUT_DIR``, which beats the config, which beats ``./out``."""
    return Path(override or os.environ.get(OUTPUT_DIR_ENV) or config.output_dir or "out")


def write_report(report: Report, outdir: str | os.PathLike, fmt: str = "csv") -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if report.table is not None:
        p = outdir / f"{report.table.name}.{fmt}"
        p.write_text(report.table.render(fmt))
        written.append(p)
    p = outdir / "summary.json"
    p.write_text(report.to_json())
    written.append(p)
    return written


# ---- metrics and built-in systems ----------------------------------------------------------

def pac_error(policy, mdp: M.TabularMdp, x0: int = 0) -> float:
    """``V*(x0) - V^pi(x0)`` by exact policy evaluation."""
    q, _ = M.value_iteration(mdp, tol=1e-12)
    v_star = M.policy_values(mdp, M.greedy_policy(q))
    v_pi = M.policy_values(mdp, policy)
    return float(v_star[x0] - v_pi[x0])


def double_integrator_instance(dt: float = 1.0, mass: float = 1.0) -> ctl.LinearSystem:
    """Position/velocity discretisation ``A = [1 dt; 0 1]``, ``B = [0; dt/mass]``."""
    if not dt > 0 or not mass > 0:
        raise ValueError("dt and mass must be positive")
    return ctl.LinearSystem([[1.0, dt], [0.0, 1.0]], [[0.0], [dt / mass]])


@dataclass(frozen=True)
class InventoryParams:
    max_stock: int = 10
    max_order: int = 3
    demand_pmf: tuple[float, ...] = (0.3, 0.4, 0.3)
    price: float = 1.0
    order_cost: float = 0.5
    holding_cost: float = 0.1
    discount: float = 0.9


def inventory_step(stock: int, order: int, demand: int, max_stock: int) -> int:
    """``clip(stock + order - demand, 0, max_stock)``."""
    return int(min(max(stock + order - demand, 0), max_stock))


def inventory_instance(params: InventoryParams = InventoryParams()) -> M.TabularMdp:
    """Stock levels ``0..max_stock``, orders ``0..max_order``, i.i.d. demand.

    Expected reward is ``price * E[sales] - order_cost * u - holding_cost * E[x']``
    with sales ``min(x + u, W)``.
    """
    pmf = np.asarray(params.demand_pmf, dtype=float)
    if params.max_stock < 0 or params.max_order < 0:
        raise ValueError("stock and order limits must be non-negative")
    if np.any(pmf < 0) or abs(pmf.sum() - 1) > 1e-9:
        raise ValueError("demand_pmf must be a probability vector")
    S, A = params.max_stock + 1, params.max_order + 1
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for x in range(S):
        for u in range(A):
            for w, p in enumerate(pmf):
                nxt = inventory_step(x, u, w, params.max_stock)
                P[x, u, nxt] += p
                R[x, u] += p * (params.price * min(x + u, w) - params.holding_cost * nxt)
            R[x, u] -= params.order_cost * u
    return M.TabularMdp(P, R, params.discount, reward_range=(float(R.min()), float(R.max())))


# ---- experiments ------------------------------------------------------------------------------

def _mdp_instance(inst: dict) -> M.TabularMdp:
    kind = inst["kind"]
    if kind == "two_state":
        return M.two_state_example(inst.get("discount", 0.5))
    if kind == "machine_repair":
        return M.machine_repair_instance(M.geometric_decay_profile(inst.get("decay_ratio", 0.5)),
                                         inst.get("discount", 0.9), inst.get("repair_reward", 0.0))
    if kind == "random":
        rng = np.random.Generator(np.random.Philox(inst.get("instance_seed", 0)))
        return M.random_mdp(rng, inst.get("S", 5), inst.get("A", 2), inst.get("discount", 0.9))
    return M.TabularMdp.from_dict(inst["mdp"])


def _run_mdp(cfg: ExperimentConfig) -> Report:
    mdp = _mdp_instance(cfg.instance)
    alg = cfg.algorithm
    method = alg["method"]
    x0 = alg.get("x0", 0)
    S, A = mdp.num_states, mdp.num_actions
    rows, q_out = [], None
    for i, rng in enumerate(replication_rngs(cfg.seed, cfg.replications)):
        if method == "value_iteration":
            q, iters = M.value_iteration(mdp, tol=alg.get("tol", 1e-8))
        elif method == "policy_iteration":
            history: list = []
            _, q = M.policy_iteration(mdp, history=history)
            iters = len(history)
        elif method == "q_learning":
            res = q_learning(MdpSampler(mdp), S, A, mdp.discount, cfg.T or 100_000, rng,
                             schedule=alg.get("schedule", "1/visit"), step_size=alg.get("step_size", 0.1),
                             epsilon=alg.get("epsilon", 0.1))
            q, iters = res.q, res.steps
        else:
            est = estimate_mdp(MdpSampler(mdp), alg.get("n_per_pair", 20), S, A, mdp.discount, rng,
                               reward_mode="known", known_reward=mdp.reward)
            q, iters = M.value_iteration(est, tol=1e-10)
        pi = M.greedy_policy(q)
        rows.append({"replication": i, "pac_error": pac_error(pi, mdp, x0), "iterations": int(iters),
                     "policy": pi.tolist()})
        q_out = q_out if q_out is not None else q
    table = Table("q", ["replication", "state", "action", "q"],
                  [(0, s, a, float(q_out[s, a])) for s in range(S) for a in range(A)])
    return Report("mdp", "pac_error", rows, cfg.config_hash(), {"method": method, "S": S, "A": A}, table)


def _lqr_problem(inst: dict) -> tuple[ctl.LinearSystem, ctl.QuadraticCost]:
    kind = inst["kind"]
    if kind == "newton":
        return ctl.newton_instance()
    if kind == "shift_register":
        return ctl.shift_register_instance(inst.get("psi", 0.0))
    if kind == "double_integrator":
        sys = double_integrator_instance(inst.get("dt", 1.0), inst.get("mass", 1.0))
        return sys, ctl.QuadraticCost(inst.get("Phi", np.eye(2)), inst.get("Psi", [[1.0]]))
    missing = [k for k in ("A", "B", "Phi", "Psi") if k not in inst]
    if missing:
        raise ConfigError([(f"$.instance.{k}", "required for kind 'inline'") for k in missing])
    sys = ctl.LinearSystem(inst["A"], inst["B"])
    cost = ctl.QuadraticCost(inst["Phi"], inst["Psi"])
    cost.check(sys)
    return sys, cost


def _run_lqr(cfg: ExperimentConfig) -> Report:
    sys, cost = _lqr_problem(cfg.instance)
    horizon = cfg.algorithm.get("horizon")
    if horizon:
        steps = ctl.riccati_recursion(sys, cost, horizon)
        K = steps[0][1]
        rows_t = [(t, *np.ravel(k).tolist()) for t, (_, k) in enumerate(steps)]
        converged = None
    else:
        sol = ctl.solve_dare(sys, cost)
        K, converged = sol.K, sol.converged
        rows_t = [(0, *np.ravel(K).tolist())]
    rho = ctl.spectral_radius(ctl.closed_loop(sys, K))
    row = {"replication": 0, "spectral_radius": rho, "K": K.tolist(), "stability": ctl.stability(ctl.closed_loop(sys, K)),
           "converged": converged}
    cols = ["t"] + [f"K{i}{j}" for i in range(K.shape[0]) for j in range(K.shape[1])]
    return Report("lqr", "spectral_radius", [row], cfg.config_hash(), {"horizon": horizon}, Table("gains", cols, rows_t))


def _run_lqg(cfg: ExperimentConfig) -> Report:
    sys = ctl.lqg_fragility_instance(cfg.instance.get("sigma2", 1e-4))
    K = ctl.lqr_gain(*ctl.newton_instance())
    L = ctl.kalman_gain(sys).L
    rows = []
    for i, t in enumerate(cfg.instance.get("mismatch", [1.0, 1.01, 1.1])):
        rho = ctl.spectral_radius(ctl.lqg_closed_loop(sys, K, L, t * sys.B))
        rows.append({"replication": i, "mismatch": t, "spectral_radius": rho})
    table = Table("closed_loop", ["mismatch", "spectral_radius"], [(r["mismatch"], r["spectral_radius"]) for r in rows])
    return Report("lqg", "spectral_radius", rows, cfg.config_hash(), {"K": K.tolist(), "L": L.tolist()}, table)


def _run_mpc(cfg: ExperimentConfig) -> Report:
    inst, alg = cfg.instance, cfg.algorithm
    mdp = M.machine_repair_instance(M.geometric_decay_profile(inst.get("decay_ratio", 0.5)),
                                    repair_reward=inst.get("repair_reward", 0.0))
    terminal = tuple(alg["terminal"]) if "terminal" in alg else (M.MACHINE_STATES - 1, M.USE)
    spec = mp.MpcSpec(mdp, alg["horizon"], terminal=terminal, r_max=alg.get("r_max", float(mdp.reward.max())))
    x0 = alg.get("x0", M.MACHINE_STATES - 1)
    env = MdpSampler(mdp)
    q0 = float(mp.plan_tables(spec, x0)[0][x0].max())
    residual = float(mdp.transition[terminal] @ mdp.reward[:, 0])
    burn_in = (q0 - spec.horizon * spec.r_max) / cfg.T
    rows, runs = [], []
    for i, rng in enumerate(replication_rngs(cfg.seed, cfg.replications)):
        run = mp.run_mpc(spec, env, cfg.T + 1, rng, x0, seed=i)
        rows.append({"replication": i, "avg_reward": sum(run.rewards) / cfg.T, "events": len(run.events)})
        runs.append(run)
    table_rows = [r for run in runs for r in run.csv_rows()]
    report = Report("mpc", "avg_reward", rows, cfg.config_hash(),
                    {"planned_value": q0, "burn_in": burn_in, "residual_reward": residual,
                     "lower_bound": burn_in + residual},
                    Table("trajectory", ["seed", "t", "state", "action", "reward"], table_rows))
    agg = report.aggregate
    report.summary["holds"] = agg["mean"] >= burn_in + residual - 2 * agg["half_width"]
    return report


def _bandit_m(alg: dict, instance: bd.BanditInstance, T: int) -> int:
    m = alg.get("m", "m_star")
    if m == "m_star":
        gaps = instance.gaps[instance.gaps > 0]
        return bd.m_star(float(gaps.min()), T) if gaps.size else 0
    if m == "t_two_thirds":
        return int(round(T ** (2 / 3)))
    return int(m)


def _run_bandit(cfg: ExperimentConfig) -> Report:
    inst = bd.BanditInstance(cfg.instance["means"], cfg.instance.get("family", "bernoulli"),
                             cfg.instance.get("noise", 0.1))
    alg, T = cfg.algorithm, cfg.T
    rngs = replication_rngs(cfg.seed, cfg.replications)
    extra: dict = {"name": alg["name"]}
    if alg["name"] == "etc":
        m = _bandit_m(alg, inst, T)
        extra["m"] = m
        curves = [bd.run_etc(inst, m, T, r) for r in rngs]
    elif alg["name"] == "successive_elimination":
        res = [bd.successive_elimination(inst, T, r, alg.get("mode", "literal")) for r in rngs]
        curves = [x.curve for x in res]
        best = set(inst.best_arms.tolist())
        extra["best_arm_survival"] = float(np.mean([bool(best & set(x.active_history[-1])) for x in res]))
        extra["schedule"] = bd.elimination_schedule(T)[1]
    else:
        delta = alg.get("delta", 1 / T)
        extra["delta"] = delta
        arms = bd.run_ucb_batch(inst, T, rngs, delta)
        curves = [bd.RegretCurve.from_arms(inst, a) for a in arms]
    rows = [{"replication": i, "regret": c.regret} for i, c in enumerate(curves)]
    table_rows = [r for i, c in enumerate(curves) for r in c.csv_rows(i)]
    return Report("bandit", "regret", rows, cfg.config_hash(), extra,
                  Table("regret", ["seed", "t", "arm", "instantaneous_gap", "cumulative_regret"], table_rows))


def _run_search(cfg: ExperimentConfig) -> Report:
    inst, alg = cfg.instance, cfg.algorithm
    if "target" in inst:
        target = np.asarray(inst["target"], dtype=float)
    else:
        target = np.random.Generator(np.random.Philox(inst.get("target_seed", 0))).standard_normal(inst.get("dim", 10))

    def R(theta):
        return -float(np.sum((theta - target) ** 2))

    rows, table_rows = [], []
    for i, rng in enumerate(replication_rngs(cfg.seed, cfg.replications)):
        theta0 = np.zeros_like(target)
        if alg["method"] == "random_search":
            tr = sr.random_search(R, theta0, alg.get("sigma", 0.1), alg.get("m", 8), alg.get("alpha", 0.05), cfg.T,
                                  rng, alg.get("directions", "gaussian"), seed=i)
        else:
            dens = sr.GaussianDensity.isotropic(target.size, alg.get("variance", 0.1))
            tr = sr.reinforce(dens, R, theta0, cfg.T, alg.get("alpha", 0.01), rng, batch=alg.get("batch", 1), seed=i)
        rows.append({"replication": i, "final_distance": float(np.linalg.norm(tr.final - target)),
                     "diverged": tr.diverged})
        for k, (r, a) in enumerate(zip(tr.rewards, tr.step_sizes)):
            table_rows.append((i, k, float(r), float(np.linalg.norm(tr.thetas[k])), float(a)))
    return Report("search", "final_distance", rows, cfg.config_hash(), {"method": alg["method"]},
                  Table("trace", ["seed", "step", "reward", "theta_norm", "step_size"], table_rows))


RUNNERS: dict[str, Callable[[ExperimentConfig], Report]] = {
    "mdp": _run_mdp, "lqr": _run_lqr, "lqg": _run_lqg, "mpc": _run_mpc, "bandit": _run_bandit, "search": _run_search,
}


def run_experiment(config: ExperimentConfig | dict, outdir: str | os.PathLike | None = None,
                   fmt: str | None = None) -> Report:
    """Run ``config`` and, when ``outdir`` is given, write its table and ``summary.json`` there."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    if cfg.experiment not in RUNNERS:
        raise ConfigError([("$.experiment", f"unknown experiment {cfg.experiment!r}")])
    try:
        report = RUNNERS[cfg.experiment](cfg)
    except ConfigError:
        raise
    except (ValueError, np.linalg.LinAlgError, RuntimeError) as err:
        raise ExperimentError(f"{cfg.experiment} experiment failed: {err}") from err
    if outdir is not None:
        write_report(report, outdir, fmt or cfg.output_format)
    return report
