"""Gaussian-mechanism count privatisation and zCDP budget accounting.

Count releases use noise variance 2H/rho; two releases per training run
(stage marginals and stage joints) each cost rho/2 and compose to rho.
Everything downstream of the noisy counts is post-processing and is not
charged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PrivacyBudget:
    """zCDP budget rho plus the failure probability used for conversions."""

    rho: float
    delta: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")


def count_noise_scale(horizon: int, rho: float) -> float:
    """Noise variance sigma^2 = 2H/rho for one count release."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not rho > 0:
        raise ValueError("rho must be positive")
    return 2.0 * horizon / rho


def gaussian_perturb(values, sigma_sq: float, rng: np.random.Generator) -> np.ndarray:
    """Add N(0, sigma_sq) per entry and clip at zero.

    sigma_sq == 0 is the identity composed with clipping and draws nothing,
    so zero-noise runs consume no randomness.
    """
    if sigma_sq < 0:
        raise ValueError("sigma_sq must be nonnegative")
    vals = np.asarray(values, dtype=float)
    if sigma_sq == 0.0:
        return np.maximum(vals, 0.0)
    noisy = vals + rng.normal(0.0, math.sqrt(sigma_sq), size=vals.shape)
    return np.maximum(noisy, 0.0)


def uniform_noise_bound(horizon: int, zones: int, w: int, d: int,
                        delta: float, rho: float) -> float:
    """High-probability uniform bound E on the count noise:

        E = 4 * sqrt(H * log(4 H M^2 w (w+d) / delta) / rho)
    """
    if horizon < 1 or zones < 1 or w < 1 or d < 1:
        raise ValueError("horizon, zones, w, d must be positive")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if not rho > 0:
        raise ValueError("rho must be positive")
    inner = 4.0 * horizon * zones**2 * w * (w + d) / delta
    return 4.0 * math.sqrt(horizon * math.log(inner) / rho)


def compose_budgets(rho_1: float, rho_2: float) -> float:
    """zCDP composes additively."""
    if rho_1 < 0 or rho_2 < 0:
        raise ValueError("budgets must be nonnegative")
    return rho_1 + rho_2


def zcdp_to_dp(rho: float, delta: float) -> float:
    """epsilon such that rho-zCDP implies (epsilon, delta)-DP."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def keyed_rng(root_seed: int, *key: int) -> np.random.Generator:
    """Counter-style generator keyed on integers (stage, anchor index, ...).

    Keying makes noise reproducible and independent of iteration order.
    """
    return np.random.default_rng([int(root_seed)] + [int(k) for k in key])


@dataclass
class PrivacyAccountant:
    """Value object accumulating per-release zCDP charges."""

    charges: list[tuple[str, float]] = field(default_factory=list)
    certified: bool = True

    def charge(self, label: str, rho: float) -> None:
        if rho < 0:
            raise ValueError("charges must be nonnegative")
        self.charges.append((label, float(rho)))

    @property
    def total_rho(self) -> float:
        total = 0.0
        for _, rho in self.charges:
            total = compose_budgets(total, rho)
        return total

    def epsilon(self, delta: float) -> float:
        if self.total_rho == 0.0:
            return 0.0
        return zcdp_to_dp(self.total_rho, delta)


@dataclass(frozen=True)
class ProjectedCounts:
    """Consistency-projected joint counts; the marginal is their exact sum."""

    joint: np.ndarray
    marginal: float
    max_deviation: float


def project_count_rows(joint_rows: np.ndarray, marginals: np.ndarray,
                       e_rho: float, iterations: int = 200) -> np.ndarray:
    """Project many noisy joint rows onto consistency with their noisy marginals.

    Per row, solves   min_x max_j |x_j - n'_j|
                      s.t.  |sum(x) - marginal| <= e_rho/2,  x >= 0
    by binary search on the max deviation t: at a given t, cell j can range
    over [max(0, n'_j - t), n'_j + t], and the row is feasible iff the
    reachable sum interval intersects [marginal - e_rho/2, marginal + e_rho/2].
    After t* is bracketed, the returned x water-fills from the per-cell
    midpoints n' toward the nearest feasible sum: all cells move by one common
    signed amount, clipped at their lower bounds.

    Args:
        joint_rows: (R, K) nonnegative noisy joint counts.
        marginals: (R,) nonnegative noisy marginal counts.
        e_rho: slack 2*|sum - marginal| allowance (>= 0).
        iterations: bisection iterations (default 200; tolerance far below 1e-9).

    Returns:
        (R, K) projected rows; row sums land within e_rho/2 of the marginals.
    """
    rows = np.asarray(joint_rows, dtype=float)
    marg = np.asarray(marginals, dtype=float)
    if rows.ndim != 2 or marg.shape != (rows.shape[0],):
        raise ValueError("joint_rows must be (R, K) with matching (R,) marginals")
    if e_rho < 0:
        raise ValueError("e_rho must be nonnegative")
    if np.any(rows < 0) or np.any(marg < 0):
        raise ValueError("counts must already be clipped at zero")

    n_rows, n_cells = rows.shape
    half = e_rho / 2.0
    row_sum = rows.sum(axis=1)
    lo_sum_target = marg - half
    hi_sum_target = marg + half

    def feasible(t):
        # reachable sum interval at deviation t
        s_min = np.maximum(rows - t[:, None], 0.0).sum(axis=1)
        s_max = row_sum + n_cells * t
        return (s_min <= hi_sum_target) & (s_max >= lo_sum_target)

    # closed-form upper bracket: at t = max_j n'_j the lower sum is 0, and the
    # second term guarantees the upper sum reaches the target window
    t_hi = np.maximum(
        rows.max(axis=1, initial=0.0),
        np.maximum(lo_sum_target - row_sum, 0.0) / n_cells,
    ) + 1.0
    if not np.all(feasible(t_hi)):
        raise AssertionError("projection bracket failed to reach feasibility")
    t_lo = np.zeros(n_rows)
    feas0 = feasible(t_lo)
    t_hi = np.where(feas0, 0.0, t_hi)
    for _ in range(iterations):
        if float(np.max(t_hi - t_lo)) <= 1e-12:  # well under the 1e-9 tolerance
            break
        mid = 0.5 * (t_lo + t_hi)
        ok = feasible(mid)
        t_hi = np.where(ok, mid, t_hi)
        t_lo = np.where(ok, t_lo, mid)
    t_star = t_hi  # feasible endpoint

    target = np.clip(row_sum, lo_sum_target, hi_sum_target)
    lower = np.maximum(rows - t_star[:, None], 0.0)

    def filled_sum(c):
        return np.maximum(rows + c[:, None], lower).sum(axis=1)

    c_lo = -t_star.copy()
    c_hi = t_star.copy()
    for _ in range(iterations):
        if float(np.max(c_hi - c_lo)) <= 1e-13:
            break
        c_mid = 0.5 * (c_lo + c_hi)
        too_low = filled_sum(c_mid) < target
        c_lo = np.where(too_low, c_mid, c_lo)
        c_hi = np.where(too_low, c_hi, c_mid)
    projected = np.maximum(rows + c_hi[:, None], lower)
    if not np.all(np.isfinite(projected)):
        raise AssertionError("projection produced non-finite counts")
    return projected


def consistency_project(joint_noisy, marginal_noisy: float, e_rho: float) -> ProjectedCounts:
    """Single-row consistency projection (see project_count_rows)."""
    joint = np.asarray(joint_noisy, dtype=float).reshape(1, -1)
    projected = project_count_rows(joint, np.asarray([marginal_noisy], dtype=float), e_rho)
    x = projected[0]
    max_dev = float(np.max(np.abs(x - joint[0]))) if x.size else 0.0
    return ProjectedCounts(joint=x, marginal=float(x.sum()), max_deviation=max_dev)
