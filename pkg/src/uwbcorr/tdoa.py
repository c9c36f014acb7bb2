"""Hyperbolic (TDoA) positioning: distance differences and least-squares solving.

A tag transmits once; anchors record reception timestamps. Pairwise timestamp
differences scaled by the speed of light give distance differences (DDoAs),
each constraining the tag to a hyperboloid. The solver minimizes the squared
hyperboloid residuals with a damped Gauss-Newton (Levenberg-Marquardt) loop
using the analytic Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    InsufficientAnchorsError,
    InsufficientDataError,
    MissingAnchorError,
)

SPEED_OF_LIGHT = 299_792_458.0  # m/s

PAIR_POLICIES = ("all_pairs", "reference_anchor")


@dataclass(frozen=True)
class Anchor:
    """Fixed receiver with a known 3D position in meters."""

    id: int
    position: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,):
            raise ValueError(f"anchor {self.id}: position must be a 3-vector")
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"anchor {self.id}: position must be finite")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class DdoaSet:
    """Distance-difference measurements over anchor pairs.

    Each entry is (i, j, ddoa_m) with ddoa_m = d_i - d_j in meters. A pair
    appears in one orientation only.
    """

    pairs: tuple[tuple[int, int, float], ...]
    anchor_ids: tuple[int, ...]

    def __post_init__(self):
        seen = set()
        for i, j, d in self.pairs:
            if i == j:
                raise ValueError(f"pair ({i},{j}) uses the same anchor twice")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"pair ({i},{j}) appears more than once")
            seen.add(key)
            if not np.isfinite(d):
                raise ValueError(f"pair ({i},{j}) has non-finite ddoa")


@dataclass(frozen=True)
class PositionEstimate:
    position: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SolverOptions:
    """How baseline positions are computed from a set of timestamps.

    ``bounds`` clips the search to a box. Badly corrupted DDoA sets can be
    inconsistent (no hyperboloid intersection), in which case the unconstrained
    minimum runs off to the far field; bounding to the deployment area keeps
    estimates physical.
    """

    pair_policy: str = "reference_anchor"
    fix_z: Optional[float] = None
    bounds: Optional[tuple[tuple[float, float, float], tuple[float, float, float]]] = None

    @classmethod
    def for_environment(cls, env, pair_policy="reference_anchor", fix_z=None, margin=2.0):
        lo = (-margin, -margin, 0.0)
        hi = (env.extent[0] + margin, env.extent[1] + margin, env.extent[2])
        return cls(pair_policy=pair_policy, fix_z=fix_z, bounds=(lo, hi))


def euclidean_distance(p, a) -> float:
    """Euclidean distance between two 3D points in meters."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a))):
        raise ValueError("non-finite input to euclidean_distance")
    return float(np.linalg.norm(p - a))


def true_ddoa(p, a_i: Anchor, a_j: Anchor) -> float:
    """Distance difference d_i - d_j for a tag at p, in meters.

    Antisymmetric in the anchor arguments.
    """
    if a_i.id == a_j.id:
        raise ValueError(f"true_ddoa needs two distinct anchors, got id {a_i.id} twice")
    return euclidean_distance(p, a_i.position) - euclidean_distance(p, a_j.position)


def measured_ddoa_set(
    timestamps: Mapping[int, float], pair_policy: str = "reference_anchor"
) -> DdoaSet:
    """Convert reception timestamps (seconds, per anchor id) into DDoAs.

    ``all_pairs`` emits every unordered pair once, oriented (i, j) with i < j
    and ddoa = c * (t_i - t_j). ``reference_anchor`` pairs every other anchor
    against the earliest receiver (ties broken by smallest id).
    """
    if pair_policy not in PAIR_POLICIES:
        raise ConfigError(f"unknown pair policy {pair_policy!r}; use one of {PAIR_POLICIES}")
    if len(timestamps) < 2:
        raise InsufficientDataError(
            f"need at least 2 timestamps to form a DDoA, got {len(timestamps)}"
        )
    ids = tuple(sorted(timestamps))
    if pair_policy == "all_pairs":
        pairs = tuple(
            (i, j, SPEED_OF_LIGHT * (timestamps[i] - timestamps[j]))
            for i, j in combinations(ids, 2)
        )
    else:
        ref = min(ids, key=lambda a: (timestamps[a], a))
        pairs = tuple(
            (i, ref, SPEED_OF_LIGHT * (timestamps[i] - timestamps[ref]))
            for i in ids
            if i != ref
        )
    return DdoaSet(pairs=pairs, anchor_ids=ids)


def _positions_by_id(anchors: Sequence[Anchor]) -> dict[int, np.ndarray]:
    return {a.id: a.position for a in anchors}


def _pair_geometry(ddoas: DdoaSet, anchors: Sequence[Anchor]):
    pos = _positions_by_id(anchors)
    for i, j, _ in ddoas.pairs:
        for a in (i, j):
            if a not in pos:
                raise MissingAnchorError(f"no position known for anchor id {a}")
    a_i = np.array([pos[i] for i, _, _ in ddoas.pairs])
    a_j = np.array([pos[j] for _, j, _ in ddoas.pairs])
    dd = np.array([d for _, _, d in ddoas.pairs])
    return a_i, a_j, dd


def residuals(p, ddoas: DdoaSet, anchors: Sequence[Anchor]) -> np.ndarray:
    """Per-pair hyperboloid residuals [d_i(p) - d_j(p)] - ddoa_ij, meters."""
    a_i, a_j, dd = _pair_geometry(ddoas, anchors)
    p = np.asarray(p, dtype=float)
    d_i = np.linalg.norm(p - a_i, axis=1)
    d_j = np.linalg.norm(p - a_j, axis=1)
    return (d_i - d_j) - dd


def solve_tdoa(
    ddoas: DdoaSet,
    anchors: Sequence[Anchor],
    init=None,
    *,
    fix_z: Optional[float] = None,
    max_iterations: int = 100,
    step_tol: float = 1e-10,
    damping: float = 1e-3,
    extra_starts: int = 4,
    bounds=None,
) -> PositionEstimate:
    """Least-squares tag position from a DDoA set.

    Levenberg-Marquardt on the hyperboloid residuals: the damping factor is
    multiplied by 10 on a rejected step and divided by 10 on an accepted one;
    a run stops when the step norm drops below ``step_tol`` or after
    ``max_iterations``. Non-convergence returns the best iterate with
    ``converged=False`` rather than raising.

    The squared-residual surface has mirror basins, so unless ``init`` is
    given the solver restarts from a few anchor-biased points and keeps the
    lowest-cost result (stopping early once the residual is exact-level).

    ``fix_z`` constrains the solution to a horizontal plane, which avoids the
    ill-conditioned vertical axis of near-planar anchor layouts.
    """
    referenced = {i for i, _, _ in ddoas.pairs} | {j for _, j, _ in ddoas.pairs}
    if len(referenced) < 3:
        raise InsufficientAnchorsError(
            f"solve_tdoa needs >= 3 distinct anchors, got {len(referenced)}"
        )
    a_i, a_j, dd = _pair_geometry(ddoas, anchors)
    free = np.array([0, 1] if fix_z is not None else [0, 1, 2])
    if bounds is not None:
        box_lo = np.asarray(bounds[0], dtype=float)
        box_hi = np.asarray(bounds[1], dtype=float)

    def clip(pt):
        return np.clip(pt, box_lo, box_hi) if bounds is not None else pt

    def residual_and_jacobian(pt):
        d_i = np.linalg.norm(pt - a_i, axis=1)
        d_j = np.linalg.norm(pt - a_j, axis=1)
        r = (d_i - d_j) - dd
        g_i = (pt - a_i) / np.maximum(d_i, 1e-12)[:, None]
        g_j = (pt - a_j) / np.maximum(d_j, 1e-12)[:, None]
        return r, (g_i - g_j)[:, free]

    def run(start):
        p = clip(start.copy())
        if fix_z is not None:
            p[2] = fix_z
        r, jac = residual_and_jacobian(p)
        cost = float(r @ r)
        lam = damping
        converged = False
        iterations = 0
        eye = np.eye(len(free))
        for iterations in range(1, max_iterations + 1):
            normal = jac.T @ jac + lam * eye
            grad = jac.T @ r
            try:
                step = np.linalg.solve(normal, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_new = p.copy()
            p_new[free] += step
            p_new = clip(p_new)
            if fix_z is not None:
                p_new[2] = fix_z
            r_new, jac_new = residual_and_jacobian(p_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                p, r, jac, cost = p_new, r_new, jac_new, cost_new
                lam = max(lam / 10.0, 1e-15)
                if float(np.linalg.norm(step)) < step_tol:
                    converged = True
                    break
            else:
                lam *= 10.0
                if float(np.linalg.norm(step)) < step_tol or lam > 1e14:
                    converged = float(np.linalg.norm(step)) < step_tol
                    break
        return PositionEstimate(
            position=p,
            residual_norm=float(np.linalg.norm(r)),
            iterations=iterations,
            converged=converged,
        )

    pos = _positions_by_id(anchors)
    participating = np.array([pos[i] for i in sorted(referenced)])
    centroid = participating.mean(axis=0)
    if init is not None:
        starts = [np.asarray(init, dtype=float)]
    else:
        starts = [centroid]
        if extra_starts > 0:
            picks = np.linspace(0, len(participating) - 1, min(extra_starts, len(participating)))
            starts.extend(
                0.8 * participating[int(i)] + 0.2 * centroid for i in picks
            )
    best = None
    for start in starts:
        candidate = run(start)
        if best is None or candidate.residual_norm < best.residual_norm:
            best = candidate
        if best.residual_norm <= 1e-9:
            break
    return best


def baseline_position(
    sample,
    anchors: Sequence[Anchor],
    *,
    options: SolverOptions = SolverOptions(),
    init=None,
) -> PositionEstimate:
    """Uncorrected TDoA estimate from a sample's reception timestamps."""
    timestamps = {c.anchor_id: c.rx_time for c in sample.raw_cirs}
    ddoas = measured_ddoa_set(timestamps, options.pair_policy)
    return solve_tdoa(ddoas, anchors, init, fix_z=options.fix_z, bounds=options.bounds)
