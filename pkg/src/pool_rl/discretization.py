"""L2-shell discretisation of the unit cube and per-zone anchor bases.

Zone m of an n-dimensional cube is the shell n(m-1)/M <= ||b||_2 < n*m/M.
The cube only reaches norm sqrt(n), so upper shells are empty; the scheme
skips them. Each usable zone carries n linearly independent anchor points
sampled inside the shell, orthonormalised by Gram-Schmidt.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-6
MAX_DRAWS = 100_000


class EmptyZoneError(ValueError):
    """The zone shell does not intersect the unit cube."""


class SamplingExhaustedError(RuntimeError):
    """Rejection sampling hit its retry cap before filling the basis."""


def zone_of(b, zones: int, dim: int) -> int:
    """Zone index of a cube point: floor(||b|| * M / n) + 1, capped to [1, M]."""
    norm = float(np.linalg.norm(np.asarray(b, dtype=float)))
    m = int(norm * zones / dim) + 1
    return min(max(m, 1), zones)


def zone_norms_batch(norms: np.ndarray, zones: int, dim: int) -> np.ndarray:
    m = (norms * zones / dim).astype(int) + 1
    return np.clip(m, 1, zones)


def zone_shell(zone: int, zones: int, dim: int) -> tuple[float, float]:
    if not 1 <= zone <= zones:
        raise ValueError(f"zone must lie in [1, {zones}]")
    width = dim / zones
    return (zone - 1) * width, zone * width


def gram_schmidt(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Orthonormalise rows, with one re-orthogonalisation pass for stability."""
    vecs = np.asarray(vectors, dtype=float)
    out = np.array(vecs, copy=True)
    k = out.shape[0]
    for _ in range(2):  # classical GS twice is numerically enough
        for i in range(k):
            for j in range(i):
                out[i] -= np.dot(out[i], out[j]) * out[j]
            norm = np.linalg.norm(out[i])
            if norm < tol:
                raise ValueError("vectors are numerically dependent")
            out[i] /= norm
    return out


@dataclass(frozen=True)
class ZoneBasis:
    """Raw anchors of one zone plus their orthonormalised frame."""

    zone: int
    anchors: np.ndarray  # (n, n), rows are anchor points inside the shell
    ortho: np.ndarray    # (n, n), orthonormal rows spanning R^n


def build_basis(zone: int, zones: int, dim: int, seed: int,
                max_draws: int = MAX_DRAWS) -> ZoneBasis:
    """Sample dim linearly independent anchors inside shell(zone) ∩ cube.

    Candidates are drawn uniformly from the cube and rejected unless their
    norm lies in the shell; a candidate is kept only if it raises the rank
    of the normalised anchor matrix (smallest singular value >= 1e-6).
    """
    lo, hi = zone_shell(zone, zones, dim)
    if lo >= math.sqrt(dim):
        raise EmptyZoneError(
            f"zone {zone}: shell lower edge {lo:.4f} exceeds the cube norm sqrt({dim})"
        )
    rng = np.random.default_rng([int(seed), int(zone)])
    anchors: list[np.ndarray] = []
    draws = 0
    batch = 1024
    while len(anchors) < dim:
        if draws >= max_draws:
            raise SamplingExhaustedError(
                f"zone {zone}: {draws} draws produced only {len(anchors)}/{dim} anchors"
            )
        take = min(batch, max_draws - draws)
        cands = rng.random((take, dim))
        draws += take
        norms = np.linalg.norm(cands, axis=1)
        for cand, norm in zip(cands[(norms >= lo) & (norms < hi)],
                              norms[(norms >= lo) & (norms < hi)]):
            if norm == 0.0:
                continue
            trial = anchors + [cand]
            normalised = np.stack([v / np.linalg.norm(v) for v in trial])
            if np.linalg.svd(normalised, compute_uv=False)[-1] >= RANK_TOL:
                anchors.append(cand)
                if len(anchors) == dim:
                    break
    anchor_mat = np.stack(anchors)
    return ZoneBasis(zone=zone, anchors=anchor_mat, ortho=gram_schmidt(anchor_mat))


def project_coefficients(b, basis: ZoneBasis) -> np.ndarray:
    """Coefficients m with sum_j m_j * anchor_j == b, solved in the ortho frame.

    The anchors span R^n, so the reconstruction is exact (residual <= 1e-9).
    """
    vec = np.asarray(b, dtype=float)
    if vec.shape[0] != basis.anchors.shape[1]:
        raise ValueError("dimension mismatch between point and basis")
    # R[i, j] = <ortho_i, anchor_j>; solve R m = ortho @ b
    r = basis.ortho @ basis.anchors.T
    coeffs = np.linalg.solve(r, basis.ortho @ vec)
    residual = np.linalg.norm(basis.anchors.T @ coeffs - vec)
    if residual > 1e-9:
        raise AssertionError(f"projection residual {residual:.2e} exceeds 1e-9")
    return coeffs


def nearest_anchor(b, anchors: np.ndarray) -> int:
    """Index of the Euclidean-nearest anchor; ties resolve to the lowest index."""
    pts = np.asarray(anchors, dtype=float)
    if pts.size == 0:
        raise ValueError("anchor list is empty")
    diff = pts - np.asarray(b, dtype=float)
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def nearest_anchor_batch(points: np.ndarray, anchors: np.ndarray,
                         chunk: int = 4096) -> np.ndarray:
    """Vectorised nearest_anchor over (k, n) points (argmin keeps lowest index)."""
    pts = np.asarray(points, dtype=float)
    anc = np.asarray(anchors, dtype=float)
    if anc.size == 0:
        raise ValueError("anchor list is empty")
    out = np.empty(pts.shape[0], dtype=int)
    anc_sq = np.einsum("ij,ij->i", anc, anc)
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        d2 = anc_sq[None, :] - 2.0 * block @ anc.T  # + ||p||^2, constant per row
        out[start:start + chunk] = np.argmin(d2, axis=1)
    return out


def piecewise_linear(x: np.ndarray, node_x: np.ndarray, node_y: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation, linear extrapolation below the first node.

    node_x must be sorted ascending. A single node gives a constant function.
    Queries above the last node clamp to its value: the top of the norm range
    is a vanishing cube-corner sliver and extrapolating into it overshoots.
    """
    x = np.asarray(x, dtype=float)
    if node_x.shape[0] == 1:
        return np.full(x.shape, node_y[0])
    out = np.interp(x, node_x, node_y)
    lo_mask = x < node_x[0]
    if np.any(lo_mask):
        slope = (node_y[1] - node_y[0]) / (node_x[1] - node_x[0])
        out = np.where(lo_mask, node_y[0] + slope * (x - node_x[0]), out)
    return out


class AnchorScheme:
    """All usable zone bases of one space, with flattened anchor tables."""

    def __init__(self, dim: int, zones: int, seed: int):
        if dim < 1 or zones < 1:
            raise ValueError("dim and zones must be positive")
        self.dim = dim
        self.zones = zones
        self.seed = seed
        self.bases: dict[int, ZoneBasis] = {}
        self.skipped_zones: list[int] = []
        max_norm = math.sqrt(dim)
        for zone in range(1, zones + 1):
            lo, _ = zone_shell(zone, zones, dim)
            if lo >= max_norm:
                break  # this and all higher shells miss the cube
            try:
                self.bases[zone] = build_basis(zone, zones, dim, seed)
            except SamplingExhaustedError:
                # vanishing shell∩cube sliver (high-dim corners); treat as unusable
                self.skipped_zones.append(zone)
        if not self.bases:
            raise EmptyZoneError("no usable zones; the scheme has no anchors")
        blocks, zone_ids = [], []
        for zone, basis in sorted(self.bases.items()):
            blocks.append(basis.anchors)
            zone_ids.extend([zone] * basis.anchors.shape[0])
        self.anchors = np.vstack(blocks)                  # (K, dim)
        self.anchor_zone = np.asarray(zone_ids, dtype=int)
        self.anchor_norms = np.linalg.norm(self.anchors, axis=1)
        self.norm_order = np.argsort(self.anchor_norms, kind="stable")
        self.sorted_norms = self.anchor_norms[self.norm_order]

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    def interpolate(self, norms, values: np.ndarray) -> np.ndarray:
        """Interpolate per-anchor values at the given norms (convex in the interior)."""
        return piecewise_linear(np.asarray(norms, dtype=float),
                                self.sorted_norms, values[self.norm_order])

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["zone", "anchor_index"] + [f"coord_{i}" for i in range(self.dim)])
            for idx in range(self.n_anchors):
                writer.writerow([self.anchor_zone[idx], idx] + [repr(float(v)) for v in self.anchors[idx]])


@dataclass(frozen=True)
class ZoneScheme:
    """Paired schemes: one for state-action space, one for next states."""

    w: int
    d: int
    zones: int
    seed: int
    sa: AnchorScheme
    state: AnchorScheme

    @staticmethod
    def build(w: int, d: int, zones: int, seed: int) -> "ZoneScheme":
        sa = AnchorScheme(dim=w + d, zones=zones, seed=int(seed) * 2 + 1)
        state = AnchorScheme(dim=w, zones=zones, seed=int(seed) * 2 + 2)
        return ZoneScheme(w=w, d=d, zones=zones, seed=seed, sa=sa, state=state)

    @property
    def n_sa_anchors(self) -> int:
        return self.sa.n_anchors

    @property
    def n_state_anchors(self) -> int:
        return self.state.n_anchors
