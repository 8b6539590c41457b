"""Multi-product inventory environments, demand models, data generation, SAA.

Order-up-to control: the agent observes inventory x and picks y >= x; demand
D realises afterwards. The lost-sales model loses (and never reveals) excess
demand, giving one-sided feedback; the backlog model carries negatives and
reveals everything. The MDP view normalises inventory and order levels into
[0,1], and training rewards are an affine map of the expected virtual reward
into [0,1] with one positive scale shared by all stages (so the optimal
policy is unchanged).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .mdp import (
    Boundary,
    BoundarySide,
    Dataset,
    MonteCarloResult,
    TransitionRecord,
    below_boundary_mask,
    compare_to_boundary,
    episode_rng,
    monte_carlo_value,
)


# ---------------------------------------------------------------------------
# demand models


@runtime_checkable
class DemandModel(Protocol):
    dims: int

    def sample(self, rng: np.random.Generator, stage: int) -> np.ndarray:
        ...

    def mean(self, stage: int) -> np.ndarray:
        ...

    def expected_overage(self, stage: int, y: np.ndarray) -> np.ndarray:
        """E[(y - D)^+] per component."""
        ...


class UniformDemand:
    """Independent U[0, bound] demand per product, stationary across stages."""

    def __init__(self, bound: float, dims: int):
        if bound <= 0:
            raise ValueError("demand bound must be positive")
        self.bound = float(bound)
        self.dims = int(dims)

    def sample(self, rng, stage):
        return rng.uniform(0.0, self.bound, self.dims)

    def sample_block(self, rng, stage, count):
        return rng.uniform(0.0, self.bound, (count, self.dims))

    def mean(self, stage):
        return np.full(self.dims, self.bound / 2.0)

    def expected_overage(self, stage, y):
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, 0.0, self.bound)
        return yc ** 2 / (2.0 * self.bound) + np.maximum(y - self.bound, 0.0)


class DeterministicDemand:
    """Fixed per-stage demand vectors (tests and degenerate benchmarks)."""

    def __init__(self, values: np.ndarray):
        vals = np.atleast_2d(np.asarray(values, dtype=float))
        self.values = vals
        self.dims = vals.shape[1]

    def sample(self, rng, stage):
        return self.values[(stage - 1) % self.values.shape[0]].copy()

    def sample_block(self, rng, stage, count):
        return np.tile(self.sample(rng, stage), (count, 1))

    def mean(self, stage):
        return self.sample(None, stage)

    def expected_overage(self, stage, y):
        d = self.sample(None, stage)
        return np.maximum(np.asarray(y, dtype=float) - d, 0.0)


class EmpiricalDemand:
    """Demand traces of shape (episodes, H, dims), e.g. from a demand CSV.

    sample() draws a random trace's stage value (stage marginals only);
    trace() returns whole traces in order for sequential dataset generation.
    """

    def __init__(self, traces: np.ndarray):
        arr = np.asarray(traces, dtype=float)
        if arr.ndim != 3 or arr.shape[0] == 0:
            raise ValueError("traces must be a nonempty (episodes, H, dims) array")
        self.traces = arr
        self.dims = arr.shape[2]

    def sample(self, rng, stage):
        idx = int(rng.integers(self.traces.shape[0]))
        return self.traces[idx, stage - 1].copy()

    def sample_block(self, rng, stage, count):
        idx = rng.integers(self.traces.shape[0], size=count)
        return self.traces[idx, stage - 1].copy()

    def trace(self, episode: int) -> np.ndarray:
        return self.traces[episode % self.traces.shape[0]]

    def mean(self, stage):
        return self.traces[:, stage - 1].mean(axis=0)

    def expected_overage(self, stage, y):
        y = np.asarray(y, dtype=float)
        d = self.traces[:, stage - 1]  # (T, dims)
        return np.maximum(y[..., None, :] - d, 0.0).mean(axis=-2)


def expected_underage(model, stage: int, y: np.ndarray) -> np.ndarray:
    """E[(D - y)^+] = E[D] - y + E[(y - D)^+]."""
    return model.mean(stage) - np.asarray(y, dtype=float) + model.expected_overage(stage, y)


def expected_sales(model, stage: int, y: np.ndarray) -> np.ndarray:
    """E[min(y, D)] = y - E[(y - D)^+]."""
    return np.asarray(y, dtype=float) - model.expected_overage(stage, y)


# ---------------------------------------------------------------------------
# parameters and raw stage dynamics


@dataclass(frozen=True)
class InventoryParams:
    dims: int
    horizon: int
    holding: np.ndarray    # (H, dims), per-unit holding cost
    backorder: np.ndarray  # (H, dims), per-unit shortage cost
    demand_bound: float
    demand: DemandModel

    def __post_init__(self):
        holding = np.asarray(self.holding, dtype=float)
        backorder = np.asarray(self.backorder, dtype=float)
        object.__setattr__(self, "holding", holding)
        object.__setattr__(self, "backorder", backorder)
        expect = (self.horizon, self.dims)
        if holding.shape != expect or backorder.shape != expect:
            raise ValueError("cost arrays must have shape (horizon, dims)")
        if np.any(holding < 0) or np.any(backorder < 0):
            raise ValueError("costs must be nonnegative")

    @staticmethod
    def sampled(dims: int, horizon: int, demand_bound: float = 100.0,
                holding_seed: int = 11, backorder_seed: int = 12,
                demand: DemandModel | None = None) -> "InventoryParams":
        """Stage costs drawn U[0, 0.5]; demand defaults to U[0, demand_bound]."""
        holding = np.random.default_rng([int(holding_seed)]).uniform(0.0, 0.5, (horizon, dims))
        backorder = np.random.default_rng([int(backorder_seed)]).uniform(0.0, 0.5, (horizon, dims))
        model = demand if demand is not None else UniformDemand(demand_bound, dims)
        return InventoryParams(dims=dims, horizon=horizon, holding=holding,
                               backorder=backorder, demand_bound=demand_bound,
                               demand=model)


def _check_order(x: np.ndarray, y: np.ndarray) -> None:
    if np.any(y < x - 1e-9):
        raise ValueError("order-up-to level y must be >= current inventory x")


def step_lost_sales(x, y, demand, holding, backorder):
    """One lost-sales transition in raw units.

    Returns (virtual_reward, next_x, censored): the virtual reward
    -(h·(y-D)^+ - b·min(y,D)) uses observable quantities only; any component
    with D > y loses demand unobserved, which censors the record.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.asarray(demand, dtype=float)
    _check_order(x, y)
    leftover = np.maximum(y - d, 0.0)
    sales = np.minimum(y, d)
    reward = -float(np.dot(holding, leftover) - np.dot(backorder, sales))
    censored = bool(np.any(d > y))
    return reward, leftover, censored


def step_backlog(x, y, demand, holding, backorder):
    """One backlog transition in raw units: full feedback, next_x may go negative."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.asarray(demand, dtype=float)
    _check_order(x, y)
    over = np.maximum(y - d, 0.0)
    under = np.maximum(d - y, 0.0)
    reward = -float(np.dot(holding, over) + np.dot(backorder, under))
    return reward, y - d


def true_stage_cost(y, demand, holding, backorder) -> np.ndarray:
    """h·(y-D)^+ + b·(D-y)^+ summed over products (broadcasts over leading axes)."""
    y = np.asarray(y, dtype=float)
    d = np.asarray(demand, dtype=float)
    over = np.maximum(y - d, 0.0)
    under = np.maximum(d - y, 0.0)
    return over @ holding + under @ backorder if over.ndim > 1 else (
        float(np.dot(holding, over) + np.dot(backorder, under)))


# ---------------------------------------------------------------------------
# environments (MDP view)


class LostSalesEnv:
    """Lost-sales environment in the normalised MDP view.

    Evaluation rewards are the negative *true* cost (holding plus shortage
    penalty on lost demand), so -monte_carlo_value(...).mean is the expected
    total cost. Infeasible actions are projected onto [x, 1] at execution.
    """

    def __init__(self, params: InventoryParams):
        self.params = params
        self.horizon = params.horizon
        self.w = params.dims
        self.d = params.dims
        self.bound = params.demand_bound
        stage_h = params.holding.sum(axis=1)
        stage_b = params.backorder.sum(axis=1)
        span = self.bound * float(np.max(stage_h + stage_b))
        # one positive scale for every stage keeps the optimal policy intact
        self._scale = 1.0 / span if span > 0 else 0.0
        self._offset = self.bound * stage_h

    def to_norm(self, x_raw: np.ndarray) -> np.ndarray:
        return np.asarray(x_raw, dtype=float) / self.bound

    def from_norm(self, x_norm: np.ndarray) -> np.ndarray:
        return np.asarray(x_norm, dtype=float) * self.bound

    def initial_state(self, rng) -> np.ndarray:
        return np.zeros(self.w)

    def initial_state_batch(self, rngs) -> np.ndarray:
        return np.zeros((len(rngs), self.w))

    def step(self, stage, state, action, rng):
        y_norm = np.maximum(np.clip(np.asarray(action, dtype=float), 0.0, 1.0), state)
        y = self.from_norm(y_norm)
        demand = self.params.demand.sample(rng, stage)
        cost = true_stage_cost(y, demand, self.params.holding[stage - 1],
                               self.params.backorder[stage - 1])
        next_norm = self.to_norm(np.maximum(y - demand, 0.0))
        return -cost, next_norm

    def step_batch(self, stage, states, actions, rngs):
        y_norm = np.maximum(np.clip(actions, 0.0, 1.0), states)
        y = self.from_norm(y_norm)
        demand = np.stack([self.params.demand.sample(rng, stage) for rng in rngs])
        over = np.maximum(y - demand, 0.0)
        under = np.maximum(demand - y, 0.0)
        cost = over @ self.params.holding[stage - 1] + under @ self.params.backorder[stage - 1]
        return -cost, self.to_norm(np.maximum(y - demand, 0.0))

    def expected_reward01(self, stage: int, sa_points: np.ndarray) -> np.ndarray:
        """Known analytic training reward in [0,1] from the expected virtual reward."""
        pts = np.atleast_2d(np.asarray(sa_points, dtype=float))
        y = self.from_norm(pts[:, self.w:])
        over = self.params.demand.expected_overage(stage, y)
        sales = expected_sales(self.params.demand, stage, y)
        raw = -(over @ self.params.holding[stage - 1]) + sales @ self.params.backorder[stage - 1]
        return (raw + self._offset[stage - 1]) * self._scale


class BacklogEnv:
    """Backlogged environment: raw inventory in [-bound, bound] shifts into [0,1]."""

    def __init__(self, params: InventoryParams):
        self.params = params
        self.horizon = params.horizon
        self.w = params.dims
        self.d = params.dims
        self.bound = params.demand_bound
        stage_cost_max = (params.holding * self.bound
                          + params.backorder * 2.0 * self.bound).sum(axis=1)
        span = float(np.max(stage_cost_max))
        self._scale = 1.0 / span if span > 0 else 0.0
        self._offset = stage_cost_max

    def to_norm(self, x_raw):
        return (np.asarray(x_raw, dtype=float) + self.bound) / (2.0 * self.bound)

    def from_norm(self, x_norm):
        return np.asarray(x_norm, dtype=float) * 2.0 * self.bound - self.bound

    def initial_state(self, rng):
        return self.to_norm(np.zeros(self.w))

    def step(self, stage, state, action, rng):
        y_norm = np.maximum(np.clip(np.asarray(action, dtype=float), 0.0, 1.0), state)
        x = self.from_norm(state)
        y = self.from_norm(y_norm)
        demand = self.params.demand.sample(rng, stage)
        reward, next_x = step_backlog(x, y, demand, self.params.holding[stage - 1],
                                      self.params.backorder[stage - 1])
        return reward, self.to_norm(next_x)

    def expected_reward01(self, stage: int, sa_points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(sa_points, dtype=float))
        y = self.from_norm(pts[:, self.w:])
        over = self.params.demand.expected_overage(stage, y)
        under = expected_underage(self.params.demand, stage, y)
        raw = -(over @ self.params.holding[stage - 1]
                + under @ self.params.backorder[stage - 1])
        return (raw + self._offset[stage - 1]) * self._scale


# ---------------------------------------------------------------------------
# behaviour policy and dataset generation


class UniformOrderUpTo:
    """Data-collecting rule: per product, order up to a uniform draw in [x, 1]."""

    def act(self, stage, state, rng):
        u = rng.uniform(size=state.shape[0])
        return state + (1.0 - state) * u


def generate_dataset(params: InventoryParams, behavior_policy, n: int, seed: int,
                     boundaries: Sequence[Boundary]) -> Dataset:
    """Roll n lost-sales episodes under the behaviour policy.

    A record is censored iff its normalised (state, action) is not below the
    stage boundary (the same comparison learners use); censored records carry
    no reward or next state, but the trajectory itself continues with the
    true next inventory. Episode i depends only on (seed, i).
    """
    if n < 1:
        raise ValueError("need at least one episode")
    if len(boundaries) != params.horizon:
        raise ValueError("need one boundary per stage")
    env = LostSalesEnv(params)
    model = params.demand
    if isinstance(behavior_policy, UniformOrderUpTo) and isinstance(model, UniformDemand):
        return _generate_dataset_fast(params, n, seed, boundaries, env)
    sequential = hasattr(model, "trace")
    episodes = []
    for e in range(n):
        rng = episode_rng(seed, e)
        x = np.zeros(params.dims)
        records = []
        for h in range(1, params.horizon + 1):
            a = np.clip(behavior_policy.act(h, x, rng), 0.0, 1.0)
            y_norm = np.maximum(a, x)
            if sequential:
                demand = model.trace(e)[h - 1]
            else:
                demand = model.sample(rng, h)
            y = env.from_norm(y_norm)
            reward, leftover, _ = step_lost_sales(env.from_norm(x), y, demand,
                                                  params.holding[h - 1],
                                                  params.backorder[h - 1])
            next_norm = env.to_norm(leftover)
            side = compare_to_boundary(np.concatenate([x, y_norm]), boundaries[h - 1])
            if side is BoundarySide.NOT_BELOW:
                records.append(TransitionRecord(h, x, y_norm, censored=True))
            else:
                r01 = (reward + env._offset[h - 1]) * env._scale
                records.append(TransitionRecord(h, x, y_norm, reward=r01,
                                                next_state=next_norm))
            x = next_norm
        episodes.append(records)
    return Dataset(episodes)


def _generate_dataset_fast(params, n, seed, boundaries, env):
    """Vectorised twin of the scalar loop for the default uniform behaviour
    and uniform demand; draws the same uniforms from the same per-episode
    streams, so trajectories and censoring match the scalar path exactly
    (rewards agree to float rounding; they are redundant for learners)."""
    horizon, dims, bound = params.horizon, params.dims, params.demand_bound
    blocks = np.empty((n, horizon, 2, dims))
    for e in range(n):
        blocks[e] = episode_rng(seed, e).uniform(size=(horizon, 2, dims))
    lam = np.stack([b.lam for b in boundaries])
    episodes = [[None] * horizon for _ in range(n)]
    x = np.zeros((n, dims))
    for h in range(1, horizon + 1):
        y_norm = x + (1.0 - x) * blocks[:, h - 1, 0]
        demand = bound * blocks[:, h - 1, 1]
        y = y_norm * bound
        leftover = np.maximum(y - demand, 0.0)
        sales = np.minimum(y, demand)
        reward = -(leftover @ params.holding[h - 1] - sales @ params.backorder[h - 1])
        r01 = (reward + env._offset[h - 1]) * env._scale
        next_norm = leftover / bound
        below = below_boundary_mask(np.hstack([x, y_norm]), boundaries[h - 1])
        for e in range(n):
            if below[e]:
                episodes[e][h - 1] = TransitionRecord(h, x[e], y_norm[e],
                                                      reward=float(r01[e]),
                                                      next_state=next_norm[e])
            else:
                episodes[e][h - 1] = TransitionRecord(h, x[e], y_norm[e],
                                                      censored=True)
        x = next_norm
    return Dataset(episodes)


# ---------------------------------------------------------------------------
# sample-average-approximation benchmark


class BaseStockPolicy:
    """Order up to a fixed per-stage level (normalised view)."""

    def __init__(self, levels_raw: np.ndarray, bound: float):
        self.levels = np.asarray(levels_raw, dtype=float) / bound  # (H, dims)

    def act(self, stage, state, rng=None):
        return np.maximum(state, self.levels[stage - 1])

    def act_batch(self, stage, states):
        return np.maximum(states, self.levels[stage - 1])


@dataclass(frozen=True)
class SaaResult:
    levels: np.ndarray  # (H, dims) raw base-stock levels
    cost: float
    cost_std: float


def saa_benchmark(params: InventoryParams, n_samples: int = 10_000, seed: int = 0,
                  grid: int = 200, refine_iters: int = 10,
                  eval_episodes: int = 10_000) -> SaaResult:
    """Stage-wise sample-average base-stock levels, then a simulated total cost.

    Per stage and product, the level minimising the sample-average true cost
    over n_samples demand draws is found on a grid of `grid` candidate levels
    in [0, bound] plus halving refinement; the benchmark cost is the simulated
    expected total cost of the resulting base-stock policy from zero inventory.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    bound = params.demand_bound
    levels = np.zeros((params.horizon, params.dims))
    candidates = np.linspace(0.0, bound, grid)
    for h in range(1, params.horizon + 1):
        rng = np.random.default_rng([int(seed), 41, h])
        if hasattr(params.demand, "sample_block"):
            draws = params.demand.sample_block(rng, h, n_samples)
        else:
            draws = np.stack([params.demand.sample(rng, h) for _ in range(n_samples)])
        for i in range(params.dims):
            d = draws[:, i]
            h_cost = params.holding[h - 1, i]
            b_cost = params.backorder[h - 1, i]

            def avg_cost(level):
                return (h_cost * np.maximum(level - d, 0.0)
                        + b_cost * np.maximum(d - level, 0.0)).mean()

            costs = np.array([avg_cost(s) for s in candidates])
            best = candidates[int(np.argmin(costs))]
            best_cost = costs.min()
            step = bound / (grid - 1)
            for _ in range(refine_iters):
                for probe in (best - step, best + step):
                    probe = min(max(probe, 0.0), bound)
                    c = avg_cost(probe)
                    if c < best_cost:
                        best, best_cost = probe, c
                step *= 0.5
            levels[h - 1, i] = best
    policy = BaseStockPolicy(levels, bound)
    env = LostSalesEnv(params)
    eval_seed = int(np.random.SeedSequence([int(seed), 97]).generate_state(1)[0])
    result = monte_carlo_value(env, policy, eval_episodes, eval_seed)
    return SaaResult(levels=levels, cost=-result.mean, cost_std=result.std)


def policy_cost(params: InventoryParams, policy, episodes: int, seed: int) -> MonteCarloResult:
    """Expected total true cost of a policy (negated reward statistics)."""
    env = LostSalesEnv(params)
    result = monte_carlo_value(env, policy, episodes, seed)
    return MonteCarloResult(mean=-result.mean, std=result.std, episodes=result.episodes)


# ---------------------------------------------------------------------------
# demand CSV ingestion


def load_demand_csv(path, horizon: int):
    """Read `period,demand_0..demand_{k-1}` rows and split into train/test traces.

    Rows are chunked in order into length-horizon episodes (trailing partial
    episodes are dropped); the first half of the episodes is the training
    set, the rest the test set.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("demand CSV is empty") from None
        if len(header) < 2 or header[0] != "period" or not header[1].startswith("demand_"):
            raise ValueError("expected header period,demand_0..demand_{k-1}")
        dims = len(header) - 1
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dims + 1:
                raise ValueError(f"line {lineno}: expected {dims + 1} fields")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: malformed demand value") from exc
            if any(v < 0 for v in values):
                raise ValueError(f"line {lineno}: negative demand")
            rows.append(values)
    episodes = len(rows) // horizon
    if episodes < 1:
        raise ValueError("not enough rows for a single episode")
    arr = np.asarray(rows[: episodes * horizon], dtype=float).reshape(episodes, horizon, dims)
    train_count = episodes // 2
    if train_count == 0:
        raise ValueError("need at least two episodes to split train/test")
    return arr[:train_count], arr[train_count:]
