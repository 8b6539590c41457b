"""Finite-horizon episodic MDP primitives with one-sided feedback.

States live in [0,1]^w, actions in [0,1]^d. Feedback (reward and next
state) is observable only for state-action pairs strictly below a
per-stage boundary vector; records on the other side are censored and
must never be read by a learner.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


class DimensionMismatchError(ValueError):
    pass


class CensoredValueError(RuntimeError):
    """Raised when code dereferences the reward/next-state of a censored record."""


class BoundarySide(enum.Enum):
    BELOW = "below"
    NOT_BELOW = "not_below"


@dataclass(frozen=True)
class Boundary:
    """Observable boundary: feedback exists iff every coordinate of (s,a) is < lam."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        object.__setattr__(self, "lam", lam)
        if lam.ndim != 1:
            raise ValueError("boundary must be a 1-d vector")
        if np.any(lam <= 0.0) or np.any(lam > 1.0):
            raise ValueError("boundary coordinates must lie in (0, 1]")

    @property
    def dim(self) -> int:
        return self.lam.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.lam))

    @staticmethod
    def uniform(level: float, dim: int) -> "Boundary":
        return Boundary(np.full(dim, float(level)))


def compare_to_boundary(b, boundary: Boundary) -> BoundarySide:
    """BELOW iff b^i < lam^i for every coordinate; any tie or excess is NOT_BELOW."""
    vec = np.asarray(b, dtype=float)
    if vec.shape != boundary.lam.shape:
        raise DimensionMismatchError(
            f"point has shape {vec.shape}, boundary has shape {boundary.lam.shape}"
        )
    if np.all(vec < boundary.lam):
        return BoundarySide.BELOW
    return BoundarySide.NOT_BELOW


def below_boundary_mask(points: np.ndarray, boundary: Boundary) -> np.ndarray:
    """Vectorised BELOW test for an (k, dim) array of points."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != boundary.dim:
        raise DimensionMismatchError(
            f"points have dim {pts.shape[-1]}, boundary has dim {boundary.dim}"
        )
    return np.all(pts < boundary.lam, axis=-1)


class TransitionRecord:
    """One (stage, state, action, reward, next_state) sample.

    Censored records carry no reward/next-state; reading either raises
    CensoredValueError so silent leakage of unobserved feedback is impossible.
    """

    __slots__ = ("stage", "state", "action", "censored", "_reward", "_next_state")

    def __init__(self, stage, state, action, reward=None, next_state=None, censored=False):
        self.stage = int(stage)
        self.state = np.asarray(state, dtype=float)
        self.action = np.asarray(action, dtype=float)
        self.censored = bool(censored)
        if self.censored:
            if reward is not None or next_state is not None:
                raise ValueError("censored records must not carry reward/next_state")
            self._reward = None
            self._next_state = None
        else:
            if reward is None or next_state is None:
                raise ValueError("uncensored records require reward and next_state")
            self._reward = float(reward)
            self._next_state = np.asarray(next_state, dtype=float)

    @property
    def reward(self) -> float:
        if self.censored:
            raise CensoredValueError("reward of a censored record is unobserved")
        return self._reward

    @property
    def next_state(self) -> np.ndarray:
        if self.censored:
            raise CensoredValueError("next state of a censored record is unobserved")
        return self._next_state

    def state_action(self) -> np.ndarray:
        return np.concatenate([self.state, self.action])


class Dataset:
    """n episodes of exactly H records each, stages 1..H in order."""

    def __init__(self, episodes: Sequence[Sequence[TransitionRecord]]):
        episodes = [list(ep) for ep in episodes]
        if not episodes:
            raise ValueError("dataset needs at least one episode")
        horizon = len(episodes[0])
        if horizon == 0:
            raise ValueError("episodes must contain at least one record")
        for ep in episodes:
            if len(ep) != horizon:
                raise ValueError("all episodes must have the same horizon")
            for h, rec in enumerate(ep, start=1):
                if rec.stage != h:
                    raise ValueError(f"expected stage {h}, found {rec.stage}")
        self.episodes = episodes
        self.horizon = horizon
        self.n = len(episodes)
        self.w = episodes[0][0].state.shape[0]
        self.d = episodes[0][0].action.shape[0]

    def records_at(self, stage: int) -> list[TransitionRecord]:
        return [ep[stage - 1] for ep in self.episodes]

    def uncensored_arrays(self, stage: int):
        """(states, actions, next_states) arrays for the uncensored records of a stage.

        This is the only access path learners use; censored records are
        filtered out before their poisoned fields could be touched.
        """
        recs = [r for r in self.records_at(stage) if not r.censored]
        if not recs:
            return (
                np.empty((0, self.w)),
                np.empty((0, self.d)),
                np.empty((0, self.w)),
            )
        states = np.stack([r.state for r in recs])
        actions = np.stack([r.action for r in recs])
        nexts = np.stack([r.next_state for r in recs])
        return states, actions, nexts

    def censored_fraction(self) -> float:
        total = self.n * self.horizon
        censored = sum(r.censored for ep in self.episodes for r in ep)
        return censored / total

    # CSV layout: episode,stage,state_0..,action_0..,reward,next_0..,censored
    # with empty reward/next fields on censored rows.
    def to_csv(self, path) -> None:
        header = (
            ["episode", "stage"]
            + [f"state_{i}" for i in range(self.w)]
            + [f"action_{i}" for i in range(self.d)]
            + ["reward"]
            + [f"next_{i}" for i in range(self.w)]
            + ["censored"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for e, ep in enumerate(self.episodes):
                for rec in ep:
                    row = [e, rec.stage]
                    row += [repr(float(v)) for v in rec.state]
                    row += [repr(float(v)) for v in rec.action]
                    if rec.censored:
                        row += [""] + [""] * self.w + [1]
                    else:
                        row += [repr(float(rec.reward))]
                        row += [repr(float(v)) for v in rec.next_state]
                        row += [0]
                    writer.writerow(row)

    @staticmethod
    def from_csv(path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            w = sum(1 for name in header if name.startswith("state_"))
            d = sum(1 for name in header if name.startswith("action_"))
            episodes: dict[int, list[TransitionRecord]] = {}
            for row in reader:
                e = int(row[0])
                stage = int(row[1])
                state = [float(v) for v in row[2 : 2 + w]]
                action = [float(v) for v in row[2 + w : 2 + w + d]]
                reward_cell = row[2 + w + d]
                next_cells = row[3 + w + d : 3 + w + d + w]
                censored = bool(int(row[3 + w + d + w]))
                if censored:
                    rec = TransitionRecord(stage, state, action, censored=True)
                else:
                    rec = TransitionRecord(
                        stage,
                        state,
                        action,
                        reward=float(reward_cell),
                        next_state=[float(v) for v in next_cells],
                    )
                episodes.setdefault(e, []).append(rec)
        ordered = [episodes[e] for e in sorted(episodes)]
        return Dataset(ordered)


@runtime_checkable
class Policy(Protocol):
    """Decision rule: act(stage, state, rng) -> action in [0,1]^d."""

    def act(self, stage: int, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...


@runtime_checkable
class Environment(Protocol):
    horizon: int

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        ...

    def step(self, stage: int, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> tuple[float, np.ndarray]:
        ...


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    std: float
    episodes: int

    @property
    def stderr(self) -> float:
        return self.std / math.sqrt(self.episodes)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Documented stream split: every episode derives its stream from (root seed, index)."""
    return np.random.default_rng([int(seed), int(episode)])


def episode_returns(env, policy, episodes: int, seed: int) -> np.ndarray:
    """Cumulative reward per episode. Episode i depends only on (seed, i)."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rngs = [episode_rng(seed, i) for i in range(episodes)]
    batch_ok = hasattr(policy, "act_batch") and hasattr(env, "step_batch") and hasattr(
        env, "initial_state_batch"
    )
    if batch_ok:
        states = env.initial_state_batch(rngs)
        totals = np.zeros(episodes)
        for h in range(1, env.horizon + 1):
            actions = policy.act_batch(h, states)
            rewards, states = env.step_batch(h, states, actions, rngs)
            totals += rewards
        return totals
    totals = np.zeros(episodes)
    for i, rng in enumerate(rngs):
        state = env.initial_state(rng)
        total = 0.0
        for h in range(1, env.horizon + 1):
            action = policy.act(h, state, rng)
            reward, state = env.step(h, state, action, rng)
            total += reward
        totals[i] = total
    return totals


def monte_carlo_value(env, policy, episodes: int, seed: int) -> MonteCarloResult:
    """Mean and sample standard deviation of the cumulative reward.

    Deterministic for a fixed seed and invariant under episode reordering
    because each episode uses its own (seed, index)-keyed stream.
    """
    totals = episode_returns(env, policy, episodes, seed)
    std = float(np.std(totals, ddof=1)) if episodes > 1 else 0.0
    return MonteCarloResult(mean=float(np.mean(totals)), std=std, episodes=episodes)
