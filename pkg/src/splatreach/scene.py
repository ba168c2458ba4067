"""Gaussian-splat scene container, ellipsoid conversion and spatial culling.

A scene stores its splats as flat numpy arrays (one row per splat) plus a
uniform-grid index over the means so distance backends can restrict queries
to nearby splats.  Scenes are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .transforms import quat_to_rotmat, quats_to_rotmats

# Confidence scale mapping a Gaussian to its bounding ellipsoid, and the
# minimum semi-axis that keeps flat (2D) splats well-posed for closest-point
# queries.
DEFAULT_K_SIGMA = 2.0
EPS_THICKNESS = 1e-3

# A splat whose smallest scale is below this is treated as a planar (2D) splat.
KIND_2D_THRESHOLD = 1e-6

KIND_2D = 2
KIND_3D = 3


@dataclass
class Splat:
    """A single anisotropic Gaussian primitive."""

    mean: np.ndarray          # [3]
    scales: np.ndarray        # [3] semi-axis standard deviations; third may be ~0
    rotation: np.ndarray      # [4] unit quaternion (w, x, y, z)
    opacity: float
    kind: str = "3D"          # "2D" (planar disc) or "3D"


@dataclass
class Ellipsoid:
    """Level set {p : (p-center)^T conic (p-center) = 1} of a Gaussian."""

    center: np.ndarray        # [3]
    rotation: np.ndarray      # [3, 3] columns are principal axes
    semi_axes: np.ndarray     # [3] strictly positive

    @property
    def conic(self) -> np.ndarray:
        D = np.diag(1.0 / self.semi_axes**2)
        return self.rotation @ D @ self.rotation.T


class UniformGridIndex:
    """Uniform grid over splat means.

    Cells are addressed by flat codes sorted once at build time; a box query
    gathers the contiguous code ranges per (ix, iy) column.  Queries covering
    a large fraction of the grid fall back to a linear scan, which is faster
    and returns the same indices.
    """

    def __init__(self, points: np.ndarray, cell_size: float):
        self.points = points
        self.cell = max(float(cell_size), 1e-6)
        self.origin = points.min(axis=0)
        ijk = np.floor((points - self.origin) / self.cell).astype(np.int64)
        self.dims = ijk.max(axis=0) + 1
        self._strides = np.array([self.dims[1] * self.dims[2], self.dims[2], 1], dtype=np.int64)
        codes = ijk @ self._strides
        self.order = np.argsort(codes, kind="stable")
        self.sorted_codes = codes[self.order]

    def query_box(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Indices of all points whose cell intersects the box [lo, hi]."""
        i0 = np.floor((np.asarray(lo) - self.origin) / self.cell).astype(np.int64)
        i1 = np.floor((np.asarray(hi) - self.origin) / self.cell).astype(np.int64)
        if np.any(i1 < 0) or np.any(i0 >= self.dims):
            return np.empty(0, dtype=np.int64)
        i0 = np.maximum(i0, 0)
        i1 = np.minimum(i1, self.dims - 1)
        n_cols = (i1[0] - i0[0] + 1) * (i1[1] - i0[1] + 1)
        # For near-global queries the column walk costs more than brute force.
        if n_cols * 4 > self.points.shape[0]:
            m = np.all((self.points >= np.asarray(lo) - self.cell), axis=1)
            m &= np.all(self.points <= np.asarray(hi) + self.cell, axis=1)
            return np.nonzero(m)[0]
        xs = np.arange(i0[0], i1[0] + 1, dtype=np.int64)
        ys = np.arange(i0[1], i1[1] + 1, dtype=np.int64)
        base = (xs[:, None] * self._strides[0] + ys[None, :] * self._strides[1]).ravel()
        starts = np.searchsorted(self.sorted_codes, base + i0[2])
        stops = np.searchsorted(self.sorted_codes, base + i1[2], side="right")
        lens = stops - starts
        keep = lens > 0
        starts, lens = starts[keep], lens[keep]
        if starts.size == 0:
            return np.empty(0, dtype=np.int64)
        total = int(lens.sum())
        out = np.repeat(starts + lens - lens.cumsum(), lens) + np.arange(total)
        return self.order[out]


class SplatScene:
    """Immutable set of Gaussian splats with bounds and a culling index."""

    def __init__(
        self,
        means: np.ndarray,
        scales: np.ndarray,
        quats: np.ndarray,
        opacities: np.ndarray,
        kinds: Optional[np.ndarray] = None,
    ):
        means = np.ascontiguousarray(means, dtype=np.float64)
        scales = np.ascontiguousarray(scales, dtype=np.float64)
        quats = np.ascontiguousarray(quats, dtype=np.float64)
        opacities = np.ascontiguousarray(opacities, dtype=np.float64)
        if means.size == 0:
            raise ValueError("empty splat scene")
        for name, arr in (("means", means), ("scales", scales), ("quats", quats),
                          ("opacities", opacities)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in splat {name}")
        norms = np.linalg.norm(quats, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero quaternion in splat data")
        self.means = means
        self.scales = np.clip(scales, 0.0, None)
        self.quats = quats / norms[:, None]
        self.opacities = np.clip(opacities, 0.0, 1.0)
        if kinds is None:
            kinds = np.where(self.scales.min(axis=1) <= KIND_2D_THRESHOLD, KIND_2D, KIND_3D)
        self.kinds = np.asarray(kinds, dtype=np.uint8)
        self.bounds = np.stack([means.min(axis=0), means.max(axis=0)])
        self.max_scales = self.scales.max(axis=1)
        extent = float(np.median(self.max_scales))
        self.index = UniformGridIndex(means, cell_size=max(2.0 * extent, 1e-3))
        self._rotmats: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def rotmats(self) -> np.ndarray:
        if self._rotmats is None:
            self._rotmats = quats_to_rotmats(self.quats)
        return self._rotmats

    def splat(self, i: int) -> Splat:
        return Splat(
            mean=self.means[i].copy(),
            scales=self.scales[i].copy(),
            rotation=self.quats[i].copy(),
            opacity=float(self.opacities[i]),
            kind="2D" if self.kinds[i] == KIND_2D else "3D",
        )

    @property
    def splats(self) -> List[Splat]:
        return [self.splat(i) for i in range(self.n)]

    @classmethod
    def from_splats(cls, splats: List[Splat]) -> "SplatScene":
        means = np.array([s.mean for s in splats], dtype=float)
        scales = np.array([s.scales for s in splats], dtype=float)
        quats = np.array([s.rotation for s in splats], dtype=float)
        op = np.array([s.opacity for s in splats], dtype=float)
        return cls(means, scales, quats, op)


def splat_to_ellipsoid(s: Splat, k_sigma: float = DEFAULT_K_SIGMA,
                       eps_thickness: float = EPS_THICKNESS) -> Ellipsoid:
    """Bounding ellipsoid of a splat at confidence scale ``k_sigma``.

    Degenerate (2D) scales are clamped to ``eps_thickness`` before scaling so
    the result is always a proper ellipsoid.
    """
    if k_sigma <= 0:
        raise ValueError("k_sigma must be positive")
    R = quat_to_rotmat(s.rotation)
    semi = k_sigma * np.maximum(np.asarray(s.scales, dtype=float), eps_thickness)
    return Ellipsoid(center=np.asarray(s.mean, dtype=float).copy(), rotation=R, semi_axes=semi)


def ellipsoid_arrays(scene: SplatScene, idx: np.ndarray, k_sigma: float = DEFAULT_K_SIGMA,
                     eps_thickness: float = EPS_THICKNESS):
    """Vectorised splat_to_ellipsoid over scene rows ``idx``.

    Returns (centers [M,3], rotations [M,3,3], semi_axes [M,3]).
    """
    centers = scene.means[idx]
    rots = scene.rotmats[idx]
    semi = k_sigma * np.maximum(scene.scales[idx], eps_thickness)
    return centers, rots, semi


def cull_splats(scene: SplatScene, center: np.ndarray, radius: float,
                k_sigma: float = DEFAULT_K_SIGMA,
                eps_thickness: float = EPS_THICKNESS) -> np.ndarray:
    """Indices of every splat with |mean - center| <= radius + extent.

    ``extent`` is the splat's clamped largest semi-axis at ``k_sigma``, so
    any splat whose bounding ellipsoid could intersect the query ball is
    included.  Indices are returned sorted ascending.
    """
    if radius <= 0:
        raise ValueError("cull radius must be positive")
    center = np.asarray(center, dtype=float)
    pad = radius + k_sigma * max(float(scene.max_scales.max()), eps_thickness)
    cand = scene.index.query_box(center - pad, center + pad)
    if cand.size == 0:
        return cand
    d = np.linalg.norm(scene.means[cand] - center, axis=1)
    bound = radius + k_sigma * np.maximum(scene.max_scales[cand], eps_thickness)
    out = cand[d <= bound]
    out.sort()
    return out
