"""Ground-truth primitive scenes (boxes and cylinders) with an exact SDF.

The primitive scene is the source geometry for synthetic splat scenes, the
collision reference for the simulator, and the distance backend of the
ground-truth-SDF baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .transforms import make_transform, pose_from_json, pose_to_json

BOX = "box"
CYLINDER = "cylinder"


@dataclass
class Primitive:
    """Oriented box (dims = full side lengths) or capped cylinder (radius, height).

    The cylinder axis is the local z of its pose.
    """

    type: str
    pose: np.ndarray                 # [4, 4]
    dims: Tuple[float, ...]
    faces: str = "all"               # surface-sampling hint: "all" or "top"
    sample_scale: float = 1.0        # surface-sampling hint: spacing multiplier

    def __post_init__(self):
        if self.type not in (BOX, CYLINDER):
            raise ValueError(f"unknown primitive type {self.type!r}")
        if any(d <= 0 for d in self.dims):
            raise ValueError("primitive dimensions must be positive")
        if self.sample_scale <= 0:
            raise ValueError("sample_scale must be positive")


@dataclass
class PrimitiveScene:
    """Ground-truth scene: primitives plus the 6-DoF reach target."""

    primitives: List[Primitive]
    target_pose: np.ndarray                       # [4, 4]
    start_base_pose: Optional[np.ndarray] = None  # [x, y, theta]
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "primitives": [
                {
                    "type": p.type,
                    "pose": pose_to_json(p.pose),
                    "dims": [float(d) for d in p.dims],
                    "faces": p.faces,
                    "sample_scale": p.sample_scale,
                }
                for p in self.primitives
            ],
            "target_pose": pose_to_json(self.target_pose),
        }
        if self.start_base_pose is not None:
            out["start_base_pose"] = [float(v) for v in self.start_base_pose]
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_json(cls, d: dict) -> "PrimitiveScene":
        prims = [
            Primitive(
                type=p["type"],
                pose=pose_from_json(p["pose"]),
                dims=tuple(p["dims"]),
                faces=p.get("faces", "all"),
                sample_scale=p.get("sample_scale", 1.0),
            )
            for p in d["primitives"]
        ]
        start = d.get("start_base_pose")
        return cls(
            primitives=prims,
            target_pose=pose_from_json(d["target_pose"]),
            start_base_pose=None if start is None else np.asarray(start, dtype=float),
            metadata=d.get("metadata", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "PrimitiveScene":
        return cls.from_json(json.loads(Path(path).read_text()))


def _box_sdf_grad(prim: Primitive, pts: np.ndarray):
    R, t = prim.pose[:3, :3], prim.pose[:3, 3]
    local = (pts - t) @ R
    half = np.asarray(prim.dims, dtype=float) / 2.0
    a = np.abs(local) - half
    outside = np.maximum(a, 0.0)
    d_out = np.linalg.norm(outside, axis=1)
    a_max = a.max(axis=1)
    d = d_out + np.minimum(a_max, 0.0)
    grad_local = np.zeros_like(local)
    out_mask = d_out > 0
    grad_local[out_mask] = (np.sign(local[out_mask]) * outside[out_mask]
                            / d_out[out_mask, None])
    in_mask = ~out_mask
    if np.any(in_mask):
        k = np.argmax(a[in_mask], axis=1)
        rows = np.nonzero(in_mask)[0]
        s = np.sign(local[rows, k])
        s[s == 0] = 1.0
        grad_local[rows, k] = s
    return d, grad_local @ R.T


def _cylinder_sdf_grad(prim: Primitive, pts: np.ndarray):
    R, t = prim.pose[:3, :3], prim.pose[:3, 3]
    local = (pts - t) @ R
    radius, height = prim.dims
    rho = np.linalg.norm(local[:, :2], axis=1)
    a_r = rho - radius
    a_z = np.abs(local[:, 2]) - height / 2.0
    o_r = np.maximum(a_r, 0.0)
    o_z = np.maximum(a_z, 0.0)
    d_out = np.hypot(o_r, o_z)
    d = d_out + np.minimum(np.maximum(a_r, a_z), 0.0)
    # Unit radial direction; on the axis fall back to +x (deterministic).
    safe_rho = np.where(rho > 1e-12, rho, 1.0)
    radial = np.zeros_like(local)
    radial[:, 0] = np.where(rho > 1e-12, local[:, 0] / safe_rho, 1.0)
    radial[:, 1] = np.where(rho > 1e-12, local[:, 1] / safe_rho, 0.0)
    grad_local = np.zeros_like(local)
    out_mask = d_out > 0
    gr = o_r[out_mask] / d_out[out_mask]
    gz = o_z[out_mask] / d_out[out_mask] * np.sign(local[out_mask, 2])
    grad_local[out_mask] = radial[out_mask] * gr[:, None]
    grad_local[out_mask, 2] = gz
    in_mask = ~out_mask
    if np.any(in_mask):
        radial_closer = a_r[in_mask] >= a_z[in_mask]
        rows = np.nonzero(in_mask)[0]
        r_rows, z_rows = rows[radial_closer], rows[~radial_closer]
        grad_local[r_rows] = radial[r_rows]
        grad_local[z_rows, 2] = np.where(local[z_rows, 2] >= 0, 1.0, -1.0)
    return d, grad_local @ R.T


def sdf_batch(scene: PrimitiveScene, pts: np.ndarray):
    """Signed distance and unit gradient of the primitive union at ``pts``.

    Returns (d [N], grad [N, 3]).  Gradients point in the direction of
    distance increase (away from the nearest surface); ties resolve to the
    lowest primitive index.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    best_d = np.full(pts.shape[0], np.inf)
    best_g = np.zeros_like(pts)
    for prim in scene.primitives:
        if prim.type == BOX:
            d, g = _box_sdf_grad(prim, pts)
        else:
            d, g = _cylinder_sdf_grad(prim, pts)
        better = d < best_d
        best_d = np.where(better, d, best_d)
        best_g = np.where(better[:, None], g, best_g)
    return best_d, best_g


def sdf_query(scene: PrimitiveScene, point: np.ndarray):
    """Exact signed distance (m) and unit gradient at a single point."""
    point = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(point)):
        raise ValueError("sdf_query requires a finite point")
    d, g = sdf_batch(scene, point[None, :])
    return float(d[0]), g[0]
