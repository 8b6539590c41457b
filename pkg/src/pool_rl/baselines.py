"""Comparison trainers sharing the anchor-table backbone.

NonPrivate runs the pipeline with all noise off. Input perturbation adds
Gaussian noise to the next-state data before non-private training; output
perturbation trains non-privately and then perturbs the anchor Q tables.
Both perturbation baselines are nominal-budget strawmen, not certified
mechanisms, and converge to NonPrivate as rho grows.
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from .mdp import Boundary, Dataset, TransitionRecord
from .pool import (
    AnchorValueTables,
    PessimismConfig,
    PoolPolicy,
    RewardFn,
    TrainResult,
    backward_induction,
)
from .privacy import PrivacyAccountant, PrivacyBudget, count_noise_scale, keyed_rng
from .discretization import ZoneScheme

BASELINE_KINDS = ("nonprivate", "ip", "op")


def nonprivate_train(dataset: Dataset, scheme: ZoneScheme, config: PessimismConfig,
                     boundaries: Sequence[Boundary], reward_fn: RewardFn,
                     iota_delta: float = 0.05) -> TrainResult:
    """Zero-noise pipeline; the pessimism penalty drops its noise-bound term."""
    if config.strategy == "bernstein":
        config = replace(config, strategy="nonprivate")
    return backward_induction(dataset, scheme, None, config, boundaries,
                              reward_fn, iota_delta=iota_delta)


def _perturbed_dataset(dataset: Dataset, sigma: float, seed: int) -> Dataset:
    """Copy with N(0, sigma^2) noise on uncensored next states, clipped to [0,1].

    Censored records stay censored and untouched: there is no feedback to
    perturb. Noise is drawn as one (n, H, w) block from a seed-keyed stream.
    """
    rng = keyed_rng(seed, 313)
    noise = rng.normal(0.0, sigma, size=(dataset.n, dataset.horizon, dataset.w))
    episodes = []
    for e, ep in enumerate(dataset.episodes):
        new_ep = []
        for rec in ep:
            if rec.censored:
                new_ep.append(rec)
            else:
                bumped = np.clip(rec.next_state + noise[e, rec.stage - 1], 0.0, 1.0)
                new_ep.append(TransitionRecord(rec.stage, rec.state, rec.action,
                                               reward=rec.reward, next_state=bumped))
        episodes.append(new_ep)
    return Dataset(episodes)


def input_perturbation_train(dataset: Dataset, scheme: ZoneScheme,
                             budget: PrivacyBudget | None, config: PessimismConfig,
                             boundaries: Sequence[Boundary], reward_fn: RewardFn,
                             noise_seed: int = 0,
                             demand_bound: float = 100.0) -> TrainResult:
    """Gaussian noise on the input data, then the non-private pipeline.

    The count-release variance 2H/rho is rescaled by the 1/demand_bound
    normalisation, so next states are perturbed at sigma^2 = 2H/(rho * bound)
    in cube units (at small rho they saturate toward uniform-clipped noise).
    budget=None (or rho=inf) reduces exactly to nonprivate_train.
    """
    if budget is None or math.isinf(budget.rho):
        return nonprivate_train(dataset, scheme, config, boundaries, reward_fn)
    sigma = math.sqrt(count_noise_scale(dataset.horizon, budget.rho) / demand_bound)
    noisy = _perturbed_dataset(dataset, sigma, noise_seed)
    result = nonprivate_train(noisy, scheme, config, boundaries, reward_fn,
                              iota_delta=budget.delta)
    accountant = PrivacyAccountant(certified=False)
    accountant.charge("nominal input perturbation", budget.rho)
    return replace(result, accountant=accountant)


def output_perturbation_train(dataset: Dataset, scheme: ZoneScheme,
                              budget: PrivacyBudget | None, config: PessimismConfig,
                              boundaries: Sequence[Boundary], reward_fn: RewardFn,
                              noise_seed: int = 0) -> TrainResult:
    """Non-private training, then N(0, 2H^3/rho) on every anchor Q, re-clipped.

    The H^2 factor scales the per-count noise variance to the Q range.
    budget=None (or rho=inf) reduces exactly to nonprivate_train.
    """
    result = nonprivate_train(dataset, scheme, config, boundaries, reward_fn,
                              iota_delta=budget.delta if budget else 0.05)
    if budget is None or math.isinf(budget.rho):
        return result
    horizon = dataset.horizon
    sigma = math.sqrt(2.0 * horizon ** 3 / budget.rho)
    tables = result.tables
    q_bar = tables.q_bar.copy()
    for h in range(1, horizon + 1):
        rng = keyed_rng(noise_seed, 727, h)
        noisy = q_bar[h - 1] + rng.normal(0.0, sigma, size=q_bar.shape[1])
        q_bar[h - 1] = np.clip(noisy, 0.0, float(horizon - h + 1))
    boundary_values = np.array([
        float(tables.scheme.sa.interpolate(
            np.asarray([tables.boundaries[h].norm]), q_bar[h])[0])
        for h in range(horizon)
    ])
    perturbed = AnchorValueTables(tables.scheme, tables.boundaries, q_bar,
                                  tables.gamma.copy(), tables.v_state.copy(),
                                  boundary_values, tables.config)
    accountant = PrivacyAccountant(certified=False)
    accountant.charge("nominal output perturbation", budget.rho)
    return TrainResult(tables=perturbed, policy=PoolPolicy(perturbed),
                       accountant=accountant, counts=result.counts,
                       kernel=result.kernel)
