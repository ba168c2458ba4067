"""Geometric distance backend: exact sphere-to-ellipsoid closest points.

Each splat is inflated to its confidence ellipsoid and the closest point from
a robot sphere centre is found in the ellipsoid principal frame by bisection
on the scalar secular equation

    F(t) = sum_i (a_i y_i / (t + a_i^2))^2 - 1

whose root t in (-a_min^2, |y| a_max + a_max^2] gives the contact point
x_i = a_i^2 y_i / (t + a_i^2).  Points on a principal axis where the root
degenerates are handled in closed form with a deterministic tie-break.
"""

from __future__ import annotations

import numpy as np

from .distance import GEOMETRIC, DistanceResult
from .scene import DEFAULT_K_SIGMA, EPS_THICKNESS, Ellipsoid, SplatScene, cull_splats, ellipsoid_arrays

_BISECT_MAX_ITER = 128
_BISECT_WIDTH = 1e-12


def _closest_points_principal(semi_axes: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Closest surface points for query points ``y`` in the principal frame.

    ``semi_axes`` (M,3) strictly positive; ``y`` (M,3).  Interior queries are
    allowed.  Vectorised bisection; the degenerate on-axis case (no root in
    the open interval) falls back to the closed form, placing the residual on
    the first smallest axis with negative sign so ties resolve to the
    lexicographically smallest candidate.
    """
    a = np.asarray(semi_axes, dtype=float)
    y = np.asarray(y, dtype=float)
    sign = np.where(y < 0.0, -1.0, 1.0)
    yf = np.abs(y)
    r2 = a * a
    ay2 = (a * yf) ** 2

    a_min = a.min(axis=1)
    a_max = a.max(axis=1)
    is_min = a == a_min[:, None]
    y_on_min = np.any(is_min & (yf > 0.0), axis=1)

    # Limit of F as t -> -a_min^2 from above when no min-axis component exists.
    denom = r2 - (a_min**2)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(is_min, 0.0, ay2 / denom**2)
    f_limit = terms.sum(axis=1) - 1.0
    degenerate = (~y_on_min) & (f_limit <= 0.0)

    lo = -(a_min**2)
    hi = np.linalg.norm(yf, axis=1) * a_max + a_max**2
    active = ~degenerate
    for _ in range(_BISECT_MAX_ITER):
        if not np.any(active):
            break
        mid = 0.5 * (lo + hi)
        f = (ay2 / (mid[:, None] + r2) ** 2).sum(axis=1) - 1.0
        pos = f > 0.0
        lo = np.where(active & pos, mid, lo)
        hi = np.where(active & ~pos, mid, hi)
        active = active & (hi - lo >= _BISECT_WIDTH)

    t = 0.5 * (lo + hi)
    x = r2 * yf / (t[:, None] + r2)
    x *= sign

    if np.any(degenerate):
        rows = np.flatnonzero(degenerate)
        safe = np.where(is_min[rows], 1.0, denom[rows])
        xd = np.where(is_min[rows], 0.0, (r2 * yf)[rows] / safe)
        resid = 1.0 - (xd**2 / r2[rows]).sum(axis=1)
        resid = a_min[rows] * np.sqrt(np.clip(resid, 0.0, None))
        xd *= sign[rows]
        first_min = np.argmax(is_min[rows], axis=1)
        xd[np.arange(rows.size), first_min] = -resid
        x[rows] = xd
    return x


def closest_point_on_ellipsoid(e: Ellipsoid, p: np.ndarray) -> np.ndarray:
    """Point on the ellipsoid surface closest to ``p`` (interior allowed)."""
    p = np.asarray(p, dtype=float).reshape(3)
    y = e.rotation.T @ (p - e.center)
    x = _closest_points_principal(e.semi_axes[None, :], y[None, :])[0]
    return e.center + e.rotation @ x


def query_scene_geometric(
    scene: SplatScene,
    positions: np.ndarray,
    radii: np.ndarray,
    d_i: float,
    opacity_min: float = 0.0,
    k_sigma: float = DEFAULT_K_SIGMA,
) -> list[DistanceResult]:
    """Minimum splat-ellipsoid distance per robot sphere.

    Returns at most one result per sphere (the closest splat), omitting
    spheres farther than ``d_i``.  A sphere centre inside an ellipsoid yields
    the signed penetration ``-|p - p_e| - r``; the gradient keeps the global
    convention (unit direction of distance decrease), so the velocity damper
    built from it forces a retreat toward the exit point.
    """
    if d_i <= 0.0:
        raise ValueError("d_i must be positive")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    n = positions.shape[0]
    if n == 0:
        return []

    center = positions.mean(axis=0)
    reach = float(np.linalg.norm(positions - center, axis=1).max())
    cand = cull_splats(scene, center, reach + d_i + float(radii.max()), k_sigma=k_sigma)
    if opacity_min > 0.0:
        cand = cand[scene.opacities[cand] >= opacity_min]
    if cand.size == 0:
        return []

    centers, rotations, semi_axes = ellipsoid_arrays(scene, cand, k_sigma=k_sigma, eps_thickness=EPS_THICKNESS)
    a_max = semi_axes.max(axis=1)

    # Pairwise pruning: |p - mu| - a_max lower-bounds the surface distance and
    # |p - mu| upper-bounds it, so pairs that cannot beat the per-sphere best
    # upper bound (or the influence cut) are dropped without changing results.
    diff = positions[:, None, :] - centers[None, :, :]
    center_dist = np.linalg.norm(diff, axis=2)
    lower = center_dist - a_max[None, :]
    best_upper = center_dist.min(axis=1)
    keep = (lower <= best_upper[:, None] + 1e-12) & (lower <= d_i + radii[:, None])
    si, ci = np.nonzero(keep)
    if si.size == 0:
        return []

    y = np.einsum("mij,mi->mj", rotations[ci], diff[si, ci])
    x = _closest_points_principal(semi_axes[ci], y)
    surf_world = centers[ci] + np.einsum("mij,mj->mi", rotations[ci], x)
    gap = np.linalg.norm(surf_world - positions[si], axis=1)
    inside = (y**2 / semi_axes[ci] ** 2).sum(axis=1) < 1.0
    d = np.where(inside, -gap, gap) - radii[si]

    results: list[DistanceResult] = []
    for j in range(n):
        mask = si == j
        if not np.any(mask):
            continue
        rows = np.flatnonzero(mask)
        best = rows[np.argmin(d[rows])]
        if d[best] > d_i:
            continue
        if gap[best] > 1e-12:
            grad = (surf_world[best] - positions[j]) / gap[best]
        else:
            # Centre exactly on the surface: fall back to the inward normal.
            m = ci[best]
            normal = rotations[m] @ (x[best] / semi_axes[m] ** 2)
            grad = -normal / np.linalg.norm(normal)
        if inside[best]:
            grad = -grad
        results.append(DistanceResult(float(d[best]), grad, j, GEOMETRIC))
    return results
