"""Pessimistic private backward induction over anchor tables.

Pipeline: bucket transitions to nearest anchors, privatise the stage count
tables with the Gaussian mechanism, reconcile joints with marginals via the
consistency projection, build row-stochastic private kernels, then run
backward induction with a pessimism penalty and clipping. Q values between
anchors come from convex piecewise-linear interpolation in the norm
coordinate; beyond the observable boundary the Q value is the constant
boundary value.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .discretization import EmptyZoneError, ZoneScheme, nearest_anchor_batch
from .mdp import Boundary, Dataset, below_boundary_mask
from .privacy import (
    PrivacyAccountant,
    PrivacyBudget,
    count_noise_scale,
    gaussian_perturb,
    keyed_rng,
    project_count_rows,
    uniform_noise_bound,
)

RewardFn = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PessimismConfig:
    """Pessimism constants and search knobs.

    c1/c2/c are the analysis constants; iota defaults to
    log(H * zones * (w+d) / delta) when left unset. scale rescales the whole
    penalty (experiment configs shrink it; the theory value is 1). strategy
    is "bernstein" (privacy-aware), "nonprivate" (noise bound dropped),
    "zero", or a callable (stage, n_tilde, variance) -> penalties.
    """

    c1: float = math.sqrt(2.0)
    c2: float = 16.0
    c: float = 2.0
    iota: float | None = None
    strategy: str | Callable = "bernstein"
    scale: float = 1.0
    grid_points: int = 32
    max_grid_candidates: int = 4096
    refine_iters: int = 10

    def __post_init__(self):
        if not self.c > 1.0:
            raise ValueError("c must exceed 1")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")

    def resolve_iota(self, horizon: int, zones: int, dims: int, delta: float) -> float:
        if self.iota is not None:
            return self.iota
        return math.log(horizon * zones * dims / delta)


@dataclass(frozen=True)
class PrivateCountTables:
    """Per-stage noisy-then-projected counts: marginal = row-sum of joint."""

    marginal: np.ndarray  # (H, K_sa)
    joint: np.ndarray     # (H, K_sa, K_state)
    sigma_sq: float
    e_rho: float


@dataclass(frozen=True)
class PrivateKernel:
    """Row-stochastic transition estimates from state-action to state anchors."""

    probs: np.ndarray  # (H, K_sa, K_state)


def tabulate_private_counts(dataset: Dataset, scheme: ZoneScheme,
                            budget: PrivacyBudget | None,
                            noise_seed: int = 0) -> tuple[PrivateCountTables, PrivacyAccountant]:
    """Bucket uncensored records to anchors, perturb, and project for consistency.

    budget=None is the zero-noise path (sigma^2 = 0, E = 0): the output equals
    the raw bucketed counts. Noise is drawn from generators keyed on
    (noise_seed, stage, anchor index), so results do not depend on iteration
    order. The marginal and joint releases are charged rho/2 each.
    """
    if dataset.w != scheme.w or dataset.d != scheme.d:
        raise ValueError("dataset and scheme dimensions disagree")
    horizon = dataset.horizon
    k_sa = scheme.n_sa_anchors
    k_state = scheme.n_state_anchors
    marginal = np.zeros((horizon, k_sa))
    joint = np.zeros((horizon, k_sa, k_state))
    for h in range(1, horizon + 1):
        states, actions, nexts = dataset.uncensored_arrays(h)
        if states.shape[0] == 0:
            continue
        sa_idx = nearest_anchor_batch(np.hstack([states, actions]), scheme.sa.anchors)
        s_idx = nearest_anchor_batch(nexts, scheme.state.anchors)
        np.add.at(joint[h - 1], (sa_idx, s_idx), 1.0)
        np.add.at(marginal[h - 1], sa_idx, 1.0)

    accountant = PrivacyAccountant()
    if budget is None:
        return PrivateCountTables(marginal=marginal, joint=joint,
                                  sigma_sq=0.0, e_rho=0.0), accountant

    sigma_sq = count_noise_scale(horizon, budget.rho)
    e_rho = uniform_noise_bound(horizon, scheme.zones, scheme.w, scheme.d,
                                budget.delta, budget.rho)
    accountant.charge("stage-marginal counts", budget.rho / 2.0)
    accountant.charge("stage-joint counts", budget.rho / 2.0)

    noisy_marginal = np.empty_like(marginal)
    noisy_joint = np.empty_like(joint)
    for h in range(horizon):
        for j in range(k_sa):
            rng = keyed_rng(noise_seed, h + 1, j)
            noisy_marginal[h, j] = gaussian_perturb(marginal[h, j:j + 1], sigma_sq, rng)[0]
            noisy_joint[h, j] = gaussian_perturb(joint[h, j], sigma_sq, rng)
        noisy_joint[h] = project_count_rows(noisy_joint[h], noisy_marginal[h], e_rho)
    projected_marginal = noisy_joint.sum(axis=2)
    return PrivateCountTables(marginal=projected_marginal, joint=noisy_joint,
                              sigma_sq=sigma_sq, e_rho=e_rho), accountant


def private_kernel(counts: PrivateCountTables, e_rho: float,
                   n_state_anchors: int) -> PrivateKernel:
    """Normalise joint counts into transition rows; low-count rows go uniform.

    A row with marginal count <= e_rho falls back to the uniform distribution
    over the state anchors, keeping every row a probability vector.
    """
    horizon, k_sa, k_state = counts.joint.shape
    if k_state != n_state_anchors:
        raise ValueError("state anchor count disagrees with the joint table")
    probs = np.full((horizon, k_sa, k_state), 1.0 / n_state_anchors)
    trusted = counts.marginal > e_rho
    if np.any(trusted):
        safe_marg = np.where(trusted, counts.marginal, 1.0)
        normalised = counts.joint / safe_marg[:, :, None]
        probs = np.where(trusted[:, :, None], normalised, probs)
    return PrivateKernel(probs=probs)


def _penalty_vector(rows: np.ndarray, v_next: np.ndarray, n_tilde: np.ndarray,
                    config: PessimismConfig, e_rho: float, horizon: int,
                    stage: int, iota: float) -> np.ndarray:
    if callable(config.strategy):
        mean = rows @ v_next
        var = np.maximum(rows @ (v_next ** 2) - mean ** 2, 0.0)
        return np.asarray(config.strategy(stage, n_tilde, var), dtype=float)
    if config.strategy == "zero":
        return np.zeros_like(n_tilde)
    if config.strategy == "nonprivate":
        e_term = 0.0
    elif config.strategy == "bernstein":
        e_term = e_rho
    else:
        raise ValueError(f"unknown pessimism strategy {config.strategy!r}")
    mean = rows @ v_next
    var = np.maximum(rows @ (v_next ** 2) - mean ** 2, 0.0)
    fallback = n_tilde <= e_rho
    safe_n = np.where(fallback, 1.0, n_tilde)
    bonus = (config.c1 * np.sqrt(var * iota / safe_n)
             + config.c2 * horizon * iota * (1.0 + e_term) / safe_n)
    penalty = np.where(fallback, config.c * horizon, bonus)
    return config.scale * penalty


def pessimism_penalty(kernel_row, v_next, n_tilde: float, config: PessimismConfig,
                      e_rho: float, horizon: int, stage: int,
                      iota: float | None = None) -> float:
    """Penalty at one anchor: C*H when the count is untrusted, otherwise

        c1 * sqrt(Var_{row}(v_next) * iota / n) + c2 * H * iota * (1 + E) / n.
    """
    if n_tilde < 0:
        raise ValueError("n_tilde must be nonnegative")
    iota_val = iota if iota is not None else (config.iota if config.iota is not None else 1.0)
    rows = np.asarray(kernel_row, dtype=float).reshape(1, -1)
    return float(_penalty_vector(rows, np.asarray(v_next, dtype=float),
                                 np.asarray([n_tilde], dtype=float),
                                 config, e_rho, horizon, stage, iota_val)[0])


class AnchorValueTables:
    """Per-stage anchor Q values, penalties, state values, and boundary data."""

    def __init__(self, scheme: ZoneScheme, boundaries: Sequence[Boundary],
                 q_bar: np.ndarray, gamma: np.ndarray, v_state: np.ndarray,
                 boundary_values: np.ndarray, config: PessimismConfig):
        self.scheme = scheme
        self.boundaries = list(boundaries)
        self.q_bar = q_bar                      # (H, K_sa)
        self.gamma = gamma                      # (H, K_sa)
        self.v_state = v_state                  # (H, K_state)
        self.boundary_values = boundary_values  # (H,)
        self.config = config
        self.horizon = q_bar.shape[0]
        self._candidates: np.ndarray | None = None

    def candidates(self) -> np.ndarray:
        """Anchor action components plus a uniform product grid, lex-sorted.

        The per-dimension grid count shrinks until the product grid fits under
        max_grid_candidates; coordinate refinement restores resolution later.
        """
        if self._candidates is not None:
            return self._candidates
        d = self.scheme.d
        g = self.config.grid_points
        while g > 2 and g ** d > self.config.max_grid_candidates:
            g -= 1
        axes = [np.linspace(0.0, 1.0, g)] * d
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        cands = np.vstack([self.scheme.sa.anchors[:, self.scheme.w:], mesh])
        order = np.lexsort(tuple(cands[:, i] for i in reversed(range(d))))
        self._candidates = cands[order]
        return self._candidates

    def q_values(self, stage: int, points: np.ndarray) -> np.ndarray:
        """Q at (k, w+d) points: interpolation below the boundary, constant beyond."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        boundary = self.boundaries[stage - 1]
        below = below_boundary_mask(pts, boundary)
        norms = np.linalg.norm(pts, axis=1)
        vals = self.scheme.sa.interpolate(norms, self.q_bar[stage - 1])
        return np.where(below, vals, self.boundary_values[stage - 1])

    def greedy_batch(self, stage: int, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Greedy actions and values for (k, w) states at one stage."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        w = self.scheme.w
        boundary = self.boundaries[stage - 1]
        lam_s, lam_a = boundary.lam[:w], boundary.lam[w:]
        q_bar = self.q_bar[stage - 1]
        q_lam = self.boundary_values[stage - 1]
        sa = self.scheme.sa

        s_sq = np.einsum("ij,ij->i", states, states)
        s_below = np.all(states < lam_s, axis=1)

        cands = self.candidates()
        c_sq = np.einsum("ij,ij->i", cands, cands)
        c_below = np.all(cands < lam_a, axis=1)
        norms = np.sqrt(s_sq[:, None] + c_sq[None, :])
        vals = sa.interpolate(norms.ravel(), q_bar).reshape(norms.shape)
        vals = np.where(s_below[:, None] & c_below[None, :], vals, q_lam)
        best_idx = np.argmax(vals, axis=1)  # first max = lexicographically least
        best_a = cands[best_idx].copy()
        best_v = vals[np.arange(vals.shape[0]), best_idx]

        def value_of(actions):
            a_sq = np.einsum("ij,ij->i", actions, actions)
            nrm = np.sqrt(s_sq + a_sq)
            v = sa.interpolate(nrm, q_bar)
            below = s_below & np.all(actions < lam_a, axis=1)
            return np.where(below, v, q_lam)

        step = 1.0 / self.config.grid_points
        for _ in range(self.config.refine_iters):
            for dim in range(self.scheme.d):
                for sign in (-1.0, 1.0):
                    probe = best_a.copy()
                    probe[:, dim] = np.clip(probe[:, dim] + sign * step, 0.0, 1.0)
                    v = value_of(probe)
                    improve = v > best_v  # strict: ties never move the action
                    if np.any(improve):
                        best_a[improve] = probe[improve]
                        best_v = np.where(improve, v, best_v)
            step *= 0.5
        return best_a, best_v

    def dump_csv(self, prefix: str) -> list[str]:
        """One file per stage: anchor_index,q_bar,gamma."""
        paths = []
        for h in range(1, self.horizon + 1):
            path = f"{prefix}_stage{h}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["anchor_index", "q_bar", "gamma"])
                for j in range(self.q_bar.shape[1]):
                    writer.writerow([j, repr(float(self.q_bar[h - 1, j])), repr(float(self.gamma[h - 1, j]))])
            paths.append(path)
        return paths


def evaluate_q(b, stage: int, tables: AnchorValueTables) -> float:
    """Q estimate at one state-action point."""
    return float(tables.q_values(stage, np.asarray(b, dtype=float)[None, :])[0])


def greedy_action(state, stage: int, tables: AnchorValueTables) -> np.ndarray:
    """Deterministic argmax action over the candidate set plus refinement."""
    actions, _ = tables.greedy_batch(stage, np.asarray(state, dtype=float)[None, :])
    return actions[0]


class PoolPolicy:
    """Greedy policy read off the trained anchor tables (deterministic)."""

    def __init__(self, tables: AnchorValueTables):
        self.tables = tables

    def act(self, stage: int, state: np.ndarray, rng=None) -> np.ndarray:
        return greedy_action(state, stage, self.tables)

    def act_batch(self, stage: int, states: np.ndarray) -> np.ndarray:
        actions, _ = self.tables.greedy_batch(stage, states)
        return actions


@dataclass(frozen=True)
class TrainResult:
    tables: AnchorValueTables
    policy: PoolPolicy
    accountant: PrivacyAccountant
    counts: PrivateCountTables
    kernel: PrivateKernel


def backward_induction(dataset: Dataset, scheme: ZoneScheme,
                       budget: PrivacyBudget | None, config: PessimismConfig,
                       boundaries: Sequence[Boundary], reward_fn: RewardFn,
                       noise_seed: int = 0,
                       iota_delta: float = 0.05) -> TrainResult:
    """Backward induction over the anchor tables.

    For h = H..1: Q = r + kernel @ V_next at every state-action anchor, then
    subtract the pessimism penalty, clip to [0, H-h+1], pin anchors beyond the
    stage boundary to the interpolated boundary value, and set V_h at each
    state anchor to its greedy value. reward_fn must return values in [0, 1].
    """
    horizon = dataset.horizon
    if len(boundaries) != horizon:
        raise ValueError("need one boundary per stage")
    for b in boundaries:
        if b.dim != scheme.w + scheme.d:
            raise ValueError("boundary dimension must equal w + d")
    if scheme.n_sa_anchors == 0 or scheme.n_state_anchors == 0:
        raise EmptyZoneError("scheme has no usable anchors")

    counts, accountant = tabulate_private_counts(dataset, scheme, budget, noise_seed)
    kernel = private_kernel(counts, counts.e_rho, scheme.n_state_anchors)
    delta = budget.delta if budget is not None else iota_delta
    iota = config.resolve_iota(horizon, scheme.zones, scheme.w + scheme.d, delta)

    k_sa = scheme.n_sa_anchors
    k_state = scheme.n_state_anchors
    q_bar = np.zeros((horizon, k_sa))
    gamma = np.zeros((horizon, k_sa))
    v_state = np.zeros((horizon, k_state))
    boundary_values = np.zeros(horizon)

    tables = AnchorValueTables(scheme, boundaries, q_bar, gamma, v_state,
                               boundary_values, config)

    v_next = np.zeros(k_state)
    for h in range(horizon, 0, -1):
        rewards = np.asarray(reward_fn(h, scheme.sa.anchors), dtype=float)
        if rewards.shape != (k_sa,):
            raise ValueError("reward_fn must return one value per state-action anchor")
        if rewards.min() < -1e-9 or rewards.max() > 1.0 + 1e-9:
            raise ValueError("reward_fn must return values in [0, 1]")
        rows = kernel.probs[h - 1]
        q_tilde = rewards + rows @ v_next
        pen = _penalty_vector(rows, v_next, counts.marginal[h - 1], config,
                              counts.e_rho, horizon, h, iota)
        clipped = np.clip(q_tilde - pen, 0.0, float(horizon - h + 1))
        # boundary value from the Bellman-backed anchors, then pin the rest
        q_lam = float(scheme.sa.interpolate(
            np.asarray([boundaries[h - 1].norm]), clipped)[0])
        below = below_boundary_mask(scheme.sa.anchors, boundaries[h - 1])
        clipped = np.where(below, clipped, q_lam)

        q_bar[h - 1] = clipped
        gamma[h - 1] = pen
        boundary_values[h - 1] = q_lam
        _, values = tables.greedy_batch(h, scheme.state.anchors)
        v_state[h - 1] = values
        v_next = values

    policy = PoolPolicy(tables)
    return TrainResult(tables=tables, policy=policy, accountant=accountant,
                       counts=counts, kernel=kernel)
