"""Experiment configuration, seeded sweep runner, and CSV persistence.

A sweep varies one axis (privacy budget, horizon, zone count, dimension, or
boundary level) while the other knobs stay at their base values; every grid
cell runs per method and per seed. Datasets, discretisation schemes, and the
SAA benchmark are shared across methods and budgets inside a cell so method
comparisons use common random numbers. The whole run is a pure function of
(config, seeds): the primary CSV is byte-identical across reruns; wall-clock
timings go to a separate sidecar file.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import input_perturbation_train, nonprivate_train, output_perturbation_train
from .discretization import ZoneScheme
from .inventory import (
    EmpiricalDemand,
    InventoryParams,
    LostSalesEnv,
    UniformOrderUpTo,
    generate_dataset,
    load_demand_csv,
    policy_cost,
    saa_benchmark,
)
from .mdp import Boundary
from .pool import PessimismConfig, backward_induction
from .privacy import PrivacyBudget, zcdp_to_dp

log = logging.getLogger("pool_rl")

SCHEMA_VERSION = 1
SWEEP_AXES = ("rho", "horizon", "zones", "dims", "lam", "none")
METHODS = ("pool", "nonprivate", "ip", "op")

CSV_COLUMNS = [
    "schema_version", "method", "rho", "horizon", "zones", "dims", "lam",
    "seed", "cost", "benchmark_cost", "relative_gap_percent", "absolute_gap",
    "epsilon_at_delta", "delta", "privacy", "status",
]


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple = ("pool",)
    sweep: str = "rho"
    rho_grid: tuple = (0.1, 1.0, 5.0, 10.0, 20.0, 40.0)
    horizon_grid: tuple = (5, 10, 15, 20, 40)
    zones_grid: tuple = (50, 100, 200, 400, 800)
    dims_grid: tuple = (2, 4, 6, 8, 16)
    lam_grid: tuple = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    rho: float = 10.0
    horizon: int = 7
    zones: int = 100
    dims: int = 2              # total state-action dimension w + d (even)
    lam: float = 1.0
    episodes: int = 10_000
    seeds: int = 10
    delta: float = 0.05
    eval_episodes: int = 10_000
    benchmark_samples: int = 10_000
    demand_bound: float = 100.0
    demand_model: str = "uniform"
    demand_csv: str = ""
    holding_seed: int = 11
    backorder_seed: int = 12
    scheme_seed: int = 5
    data_seed: int = 2024
    noise_seed: int = 77
    eval_seed: int = 4242
    benchmark_seed: int = 31
    pessimism_scale: float = 1e-4
    pessimism_c: float = 2.0
    grid_points: int = 32
    out: str = "results.csv"

    def __post_init__(self):
        if self.sweep not in SWEEP_AXES:
            raise ValueError(f"sweep must be one of {SWEEP_AXES}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        for name in ("rho_grid", "horizon_grid", "zones_grid", "dims_grid", "lam_grid"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be nonempty")
        if self.dims % 2 != 0 or any(v % 2 for v in self.dims_grid):
            raise ValueError("dims values must be even (state dim equals action dim)")
        if self.seeds < 1 or self.episodes < 1:
            raise ValueError("seeds and episodes must be positive")

    def axis_values(self):
        if self.sweep == "rho":
            return [float(v) for v in self.rho_grid]
        if self.sweep == "horizon":
            return [int(v) for v in self.horizon_grid]
        if self.sweep == "zones":
            return [int(v) for v in self.zones_grid]
        if self.sweep == "dims":
            return [int(v) for v in self.dims_grid]
        if self.sweep == "lam":
            return [float(v) for v in self.lam_grid]
        return [None]

    def cell_settings(self, axis_value):
        """Base knobs with the sweep axis overridden."""
        settings = dict(rho=self.rho, horizon=self.horizon, zones=self.zones,
                        dims=self.dims, lam=self.lam)
        if self.sweep != "none":
            settings[self.sweep] = axis_value
        return settings


_LIST_KEYS = {"methods", "rho_grid", "horizon_grid", "zones_grid", "dims_grid", "lam_grid"}
_INT_KEYS = {"horizon", "zones", "dims", "episodes", "seeds", "eval_episodes",
             "benchmark_samples", "holding_seed", "backorder_seed", "scheme_seed",
             "data_seed", "noise_seed", "eval_seed", "benchmark_seed", "grid_points"}
_FLOAT_KEYS = {"rho", "lam", "delta", "demand_bound", "pessimism_scale", "pessimism_c"}
# accepted aliases for the inventory params-file keys
_ALIASES = {"H": "horizon", "M": "zones", "method": "methods", "n": "episodes"}


def load_config(path) -> ExperimentConfig:
    """Parse a flat key=value config file (comments with #, comma-sep lists)."""
    values: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            key = _ALIASES.get(key, key)
            if key in _LIST_KEYS:
                parts = [p.strip() for p in raw.split(",") if p.strip()]
                if key == "methods":
                    values[key] = tuple(parts)
                elif key in ("horizon_grid", "zones_grid", "dims_grid"):
                    values[key] = tuple(int(float(p)) for p in parts)
                else:
                    values[key] = tuple(float(p) for p in parts)
            elif key in _INT_KEYS:
                values[key] = int(float(raw))
            elif key in _FLOAT_KEYS:
                values[key] = float(raw)
            elif key in ("sweep", "demand_model", "demand_csv", "out"):
                values[key] = raw
            else:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    return ExperimentConfig(**values)


@dataclass(frozen=True)
class ResultRow:
    method: str
    rho: float
    horizon: int
    zones: int
    dims: int
    lam: float
    seed: int
    cost: float
    benchmark_cost: float
    relative_gap_percent: float
    absolute_gap: float
    epsilon_at_delta: float
    delta: float
    privacy: str
    status: str
    wall_time_s: float

    def csv_values(self):
        return [SCHEMA_VERSION, self.method, repr(float(self.rho)), self.horizon,
                self.zones, self.dims, repr(float(self.lam)), self.seed,
                repr(float(self.cost)), repr(float(self.benchmark_cost)),
                repr(float(self.relative_gap_percent)), repr(float(self.absolute_gap)),
                repr(float(self.epsilon_at_delta)), repr(float(self.delta)), self.privacy,
                self.status]


def relative_gap(cost: float, benchmark_cost: float) -> float:
    """Relative optimality gap in percent: 100 * (cost - benchmark) / benchmark."""
    if not benchmark_cost > 0:
        raise ValueError("benchmark cost must be positive")
    return 100.0 * (cost - benchmark_cost) / benchmark_cost


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class _CellRunner:
    """Caches environments, schemes, datasets, and benchmarks across cells."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._envs: dict = {}
        self._schemes: dict = {}
        self._benchmarks: dict = {}
        self._datasets: dict = {}

    def _demand(self, products: int, horizon: int):
        if self.config.demand_model == "uniform":
            return None  # InventoryParams.sampled defaults to uniform
        if self.config.demand_model == "csv":
            train, _ = load_demand_csv(self.config.demand_csv, horizon)
            if train.shape[2] != products:
                raise ValueError("demand CSV dimension disagrees with products")
            return EmpiricalDemand(train)
        raise ValueError(f"unknown demand model {self.config.demand_model!r}")

    def env(self, products: int, horizon: int):
        key = (products, horizon)
        if key not in self._envs:
            params = InventoryParams.sampled(
                dims=products, horizon=horizon,
                demand_bound=self.config.demand_bound,
                holding_seed=self.config.holding_seed,
                backorder_seed=self.config.backorder_seed,
                demand=self._demand(products, horizon),
            )
            self._envs[key] = (params, LostSalesEnv(params))
        return self._envs[key]

    def scheme(self, products: int, zones: int) -> ZoneScheme:
        key = (products, zones)
        if key not in self._schemes:
            self._schemes[key] = ZoneScheme.build(products, products, zones,
                                                  self.config.scheme_seed)
        return self._schemes[key]

    def benchmark(self, products: int, horizon: int) -> float:
        key = (products, horizon)
        if key not in self._benchmarks:
            params, _ = self.env(products, horizon)
            result = saa_benchmark(params, n_samples=self.config.benchmark_samples,
                                   seed=self.config.benchmark_seed,
                                   eval_episodes=self.config.eval_episodes)
            self._benchmarks[key] = result.cost
        return self._benchmarks[key]

    def dataset(self, products: int, horizon: int, lam: float, seed_idx: int, boundaries):
        key = (products, horizon, lam, seed_idx)
        if key not in self._datasets:
            params, _ = self.env(products, horizon)
            data_seed = _derived_seed(self.config.data_seed, seed_idx)
            self._datasets[key] = generate_dataset(params, UniformOrderUpTo(),
                                                   self.config.episodes, data_seed,
                                                   boundaries)
        return self._datasets[key]

    def run(self, axis_idx: int, axis_value, method: str, seed_idx: int) -> ResultRow:
        cfg = self.config
        settings = cfg.cell_settings(axis_value)
        rho = float(settings["rho"])
        horizon = int(settings["horizon"])
        zones = int(settings["zones"])
        dims = int(settings["dims"])
        lam = float(settings["lam"])
        products = dims // 2
        start = time.perf_counter()
        try:
            params, env = self.env(products, horizon)
            scheme = self.scheme(products, zones)
            boundaries = [Boundary.uniform(lam, dims) for _ in range(horizon)]
            dataset = self.dataset(products, horizon, lam, seed_idx, boundaries)
            benchmark_cost = self.benchmark(products, horizon)
            pess = PessimismConfig(c=cfg.pessimism_c, scale=cfg.pessimism_scale,
                                   grid_points=cfg.grid_points)
            budget = PrivacyBudget(rho=rho, delta=cfg.delta)
            # noise streams are shared across the sweep axis (common random
            # numbers): only the noise scale changes along the sweep
            noise_seed = _derived_seed(cfg.noise_seed, seed_idx,
                                       METHODS.index(method))
            if method == "pool":
                result = backward_induction(dataset, scheme, budget, pess,
                                            boundaries, env.expected_reward01,
                                            noise_seed=noise_seed)
                privacy, epsilon = "zcdp", result.accountant.epsilon(cfg.delta)
            elif method == "nonprivate":
                result = nonprivate_train(dataset, scheme, pess, boundaries,
                                          env.expected_reward01, iota_delta=cfg.delta)
                privacy, epsilon = "none", float("nan")
            elif method == "ip":
                result = input_perturbation_train(dataset, scheme, budget, pess,
                                                  boundaries, env.expected_reward01,
                                                  noise_seed=noise_seed,
                                                  demand_bound=cfg.demand_bound)
                privacy, epsilon = "nominal", zcdp_to_dp(rho, cfg.delta)
            elif method == "op":
                result = output_perturbation_train(dataset, scheme, budget, pess,
                                                   boundaries, env.expected_reward01,
                                                   noise_seed=noise_seed)
                privacy, epsilon = "nominal", zcdp_to_dp(rho, cfg.delta)
            else:
                raise ValueError(f"unknown method {method!r}")
            cost = policy_cost(params, result.policy, cfg.eval_episodes,
                               cfg.eval_seed).mean
            gap = relative_gap(cost, benchmark_cost)
            return ResultRow(method=method, rho=rho, horizon=horizon, zones=zones,
                             dims=dims, lam=lam, seed=seed_idx, cost=cost,
                             benchmark_cost=benchmark_cost,
                             relative_gap_percent=gap,
                             absolute_gap=cost - benchmark_cost,
                             epsilon_at_delta=epsilon, delta=cfg.delta,
                             privacy=privacy, status="ok",
                             wall_time_s=time.perf_counter() - start)
        except Exception:
            log.exception("cell failed: axis=%s method=%s seed=%d",
                          axis_value, method, seed_idx)
            return ResultRow(method=method, rho=rho, horizon=horizon, zones=zones,
                             dims=dims, lam=lam, seed=seed_idx, cost=float("nan"),
                             benchmark_cost=float("nan"),
                             relative_gap_percent=float("nan"),
                             absolute_gap=float("nan"),
                             epsilon_at_delta=float("nan"), delta=cfg.delta,
                             privacy="", status="failed",
                             wall_time_s=time.perf_counter() - start)


def _run_chunk(args):
    config, jobs = args
    runner = _CellRunner(config)
    return [runner.run(*job) for job in jobs]


def run_experiment(config: ExperimentConfig, write: bool = True) -> list[ResultRow]:
    """Run the configured sweep and (optionally) persist the result rows.

    Rows are sorted by grid keys before writing so the primary CSV is
    byte-identical for identical (config, seeds). POOL_THREADS > 1 splits
    cells across worker processes.
    """
    jobs = []
    for axis_idx, axis_value in enumerate(config.axis_values()):
        for method in config.methods:
            for seed_idx in range(config.seeds):
                jobs.append((axis_idx, axis_value, method, seed_idx))
    workers = int(os.environ.get("POOL_THREADS", "1") or "1")
    if workers > 1 and len(jobs) > 1:
        chunks = [jobs[i::workers] for i in range(workers)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            results = pool.map(_run_chunk, [(config, chunk) for chunk in chunks])
        rows = [row for chunk_rows in results for row in chunk_rows]
    else:
        runner = _CellRunner(config)
        rows = [runner.run(*job) for job in jobs]
    rows.sort(key=lambda r: (r.method, r.rho, r.horizon, r.zones, r.dims,
                             r.lam, r.seed))
    if write:
        write_rows_csv(rows, config.out)
    return rows


def write_rows_csv(rows, path) -> None:
    """Primary CSV (deterministic) plus a .timing.csv sidecar with wall times."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_values())
    timing_path = str(path) + ".timing.csv"
    with open(timing_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rho", "horizon", "zones", "dims", "lam",
                         "seed", "wall_time_s"])
        for row in rows:
            writer.writerow([row.method, repr(float(row.rho)), row.horizon, row.zones,
                             row.dims, repr(float(row.lam)), row.seed,
                             f"{row.wall_time_s:.3f}"])


def read_rows_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(ResultRow(
                method=rec["method"], rho=float(rec["rho"]),
                horizon=int(rec["horizon"]), zones=int(rec["zones"]),
                dims=int(rec["dims"]), lam=float(rec["lam"]),
                seed=int(rec["seed"]), cost=float(rec["cost"]),
                benchmark_cost=float(rec["benchmark_cost"]),
                relative_gap_percent=float(rec["relative_gap_percent"]),
                absolute_gap=float(rec["absolute_gap"]),
                epsilon_at_delta=float(rec["epsilon_at_delta"]),
                delta=float(rec["delta"]), privacy=rec["privacy"],
                status=rec["status"], wall_time_s=0.0))
    return rows


GROUP_KEYS = ("method", "rho", "horizon", "zones", "dims", "lam")


def summarize(rows) -> list[dict]:
    """Per-cell mean and sample standard deviation of costs and gaps.

    Row order does not matter; groups come back sorted by the grid keys.
    """
    if not rows:
        raise ValueError("no rows to summarize")
    groups: dict[tuple, list[ResultRow]] = {}
    for row in rows:
        key = tuple(getattr(row, k) for k in GROUP_KEYS)
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups):
        members = groups[key]
        gaps = np.asarray([r.relative_gap_percent for r in members])
        costs = np.asarray([r.cost for r in members])
        entry = dict(zip(GROUP_KEYS, key))
        entry.update(
            n=len(members),
            mean_gap=float(np.mean(gaps)),
            sd_gap=float(np.std(gaps, ddof=1)) if len(members) > 1 else 0.0,
            mean_cost=float(np.mean(costs)),
            sd_cost=float(np.std(costs, ddof=1)) if len(members) > 1 else 0.0,
            failed=sum(r.status != "ok" for r in members),
        )
        out.append(entry)
    return out


def write_summary_csv(summary_rows, path) -> None:
    cols = list(GROUP_KEYS) + ["n", "mean_gap", "sd_gap", "mean_cost", "sd_cost", "failed"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for entry in summary_rows:
            writer.writerow([entry[c] if not isinstance(entry[c], float) else repr(float(entry[c]))
                             for c in cols])
