"""Shared distance-query result type and the ground-truth SDF backend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .primitives import PrimitiveScene, sdf_batch

GEOMETRIC = "geometric"
RASTER = "raster"
GT_SDF = "gt-sdf"
BACKENDS = (GEOMETRIC, RASTER, GT_SDF)


@dataclass(frozen=True)
class DistanceResult:
    """One sphere-to-environment proximity measurement.

    ``grad`` is the unit direction from the sphere centre toward the closest
    obstacle surface, i.e. moving along ``grad`` decreases ``d``.
    """

    d: float
    grad: np.ndarray
    sphere_id: int
    backend: str
    camera_id: int | None = None


def query_scene_sdf(
    scene: PrimitiveScene,
    positions: np.ndarray,
    radii: np.ndarray,
    d_i: float,
) -> list[DistanceResult]:
    """Ground-truth distances from the primitive scene (one result per sphere)."""
    if d_i <= 0.0:
        raise ValueError("d_i must be positive")
    positions = np.atleast_2d(positions)
    d, grad = sdf_batch(scene, positions)
    d = d - np.asarray(radii)
    results = []
    for j in np.flatnonzero(d <= d_i):
        # The SDF gradient points away from the surface; flip it to obstacle-pointing.
        results.append(DistanceResult(float(d[j]), -grad[j], int(j), GT_SDF))
    return results
