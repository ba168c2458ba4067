"""Synthetic tabletop / bookshelf scene generation.

Scenes are built from box and cylinder primitives, then converted to a splat
scene by sampling every exposed primitive surface on a jittered grid.  Each
sample becomes a flat (2D) splat lying in the surface tangent plane, so the
splat means sit exactly on the primitive surfaces and the primitive SDF can
be used as ground truth for them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any

import numpy as np

from .primitives import BOX, CYLINDER, Primitive, PrimitiveScene, sdf_batch
from .scene import SplatScene
from .transforms import make_transform, quat_align_z, quat_mul, rotz, roty

DEFAULT_SPACING = 0.02
#: Tangential splat radius as a fraction of the sampling spacing.  0.4 keeps a
#: grid of unit-opacity splats median-opaque (transmittance through the worst
#: gap corner is (1 - e^{-25/16})^4 ~ 0.39 < 0.5) while bounding how many
#: pixels each splat touches, which is what rasterisation cost scales with.
SPLAT_RADIUS_FACTOR = 0.4
#: Spacing multiplier for large flat safety surfaces (floor, room walls).
#: Coarser sampling with proportionally larger splats renders the same
#: opaque plane from far fewer primitives.
COARSE_SCALE = 2.5

_FACE_NORMALS = {
    "+x": np.array([1.0, 0.0, 0.0]),
    "-x": np.array([-1.0, 0.0, 0.0]),
    "+y": np.array([0.0, 1.0, 0.0]),
    "-y": np.array([0.0, -1.0, 0.0]),
    "+z": np.array([0.0, 0.0, 1.0]),
    "-z": np.array([0.0, 0.0, -1.0]),
}


@dataclass
class GeneratorSpec:
    """Parameters controlling one synthetic scene draw."""

    kind: str = "table"
    seed: int = 0
    clutter_count: int = 6
    spacing: float = DEFAULT_SPACING
    walls: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("table", "bookshelf"):
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.spacing <= 0.0:
            raise ValueError("spacing must be positive")
        if self.clutter_count < 0:
            raise ValueError("clutter_count must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GeneratorSpec":
        return cls(**data)


def _faces_of(prim: Primitive) -> tuple[str, ...]:
    if prim.faces == "all":
        return ("+x", "-x", "+y", "-y", "+z", "-z")
    if prim.faces == "top":
        return ("+z",)
    return tuple(f.strip() for f in prim.faces.split(","))


def _grid_1d(length: float, spacing: float) -> tuple[np.ndarray, float]:
    """Cell centres covering [-length/2, length/2] plus the cell width."""
    n = max(1, int(round(length / spacing)))
    step = length / n
    return (np.arange(n) + 0.5) * step - 0.5 * length, step


def _sample_box(prim: Primitive, spacing: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    half = np.asarray(prim.dims) / 2.0
    pts: list[np.ndarray] = []
    nrms: list[np.ndarray] = []
    for face in _faces_of(prim):
        normal = _FACE_NORMALS[face]
        axis = int(np.argmax(np.abs(normal)))
        u_axis, v_axis = [i for i in range(3) if i != axis]
        u, du = _grid_1d(prim.dims[u_axis], spacing)
        v, dv = _grid_1d(prim.dims[v_axis], spacing)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        uu = uu.ravel() + rng.uniform(-0.35 * du, 0.35 * du, uu.size)
        vv = vv.ravel() + rng.uniform(-0.35 * dv, 0.35 * dv, vv.size)
        local = np.empty((uu.size, 3))
        local[:, axis] = np.sign(normal[axis]) * half[axis]
        local[:, u_axis] = uu
        local[:, v_axis] = vv
        pts.append(local)
        nrms.append(np.broadcast_to(normal, (uu.size, 3)))
    points = np.concatenate(pts)
    normals = np.concatenate(nrms)
    R = prim.pose[:3, :3]
    return points @ R.T + prim.pose[:3, 3], normals @ R.T


def _sample_cylinder(prim: Primitive, spacing: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    radius, height = prim.dims[0], prim.dims[1]
    pts: list[np.ndarray] = []
    nrms: list[np.ndarray] = []
    faces = _faces_of(prim)
    # Lateral surface (always sampled unless restricted to caps only).
    if any(f not in ("+z", "-z") for f in faces) or prim.faces == "all":
        n_th = max(3, int(round(2.0 * np.pi * radius / spacing)))
        th, dth = _grid_1d(2.0 * np.pi, 2.0 * np.pi / n_th)
        z, dz = _grid_1d(height, spacing)
        tt, zz = np.meshgrid(th, z, indexing="ij")
        tt = tt.ravel() + rng.uniform(-0.35 * dth, 0.35 * dth, tt.size)
        zz = zz.ravel() + rng.uniform(-0.35 * dz, 0.35 * dz, zz.size)
        normal = np.stack([np.cos(tt), np.sin(tt), np.zeros_like(tt)], axis=1)
        pts.append(normal * radius + np.stack([np.zeros_like(zz), np.zeros_like(zz), zz], axis=1))
        nrms.append(normal)
    for face in ("+z", "-z"):
        if prim.faces != "all" and face not in faces:
            continue
        u, du = _grid_1d(2.0 * radius, spacing)
        uu, vv = np.meshgrid(u, u, indexing="ij")
        uu = uu.ravel() + rng.uniform(-0.35 * du, 0.35 * du, uu.size)
        vv = vv.ravel() + rng.uniform(-0.35 * du, 0.35 * du, vv.size)
        keep = uu ** 2 + vv ** 2 <= radius ** 2
        uu, vv = uu[keep], vv[keep]
        sign = 1.0 if face == "+z" else -1.0
        local = np.stack([uu, vv, np.full_like(uu, sign * height / 2.0)], axis=1)
        pts.append(local)
        nrms.append(np.broadcast_to([0.0, 0.0, sign], (uu.size, 3)).copy())
    points = np.concatenate(pts)
    normals = np.concatenate(nrms)
    R = prim.pose[:3, :3]
    return points @ R.T + prim.pose[:3, 3], normals @ R.T


def splats_from_primitives(
    scene: PrimitiveScene,
    spacing: float = DEFAULT_SPACING,
    rng: np.random.Generator | None = None,
) -> SplatScene:
    """Sample primitive surfaces into flat splats.

    Sample points that fall strictly inside *another* primitive (occluded
    contact patches, e.g. the tabletop under a clutter object) are dropped,
    which keeps every retained mean on the union surface.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    all_pts: list[np.ndarray] = []
    all_nrm: list[np.ndarray] = []
    all_rad: list[np.ndarray] = []
    for prim in scene.primitives:
        eff = spacing * prim.sample_scale
        if prim.type == BOX:
            p, n = _sample_box(prim, eff, rng)
        else:
            p, n = _sample_cylinder(prim, eff, rng)
        all_pts.append(p)
        all_nrm.append(n)
        all_rad.append(np.full(p.shape[0], SPLAT_RADIUS_FACTOR * eff))
    points = np.concatenate(all_pts)
    normals = np.concatenate(all_nrm)
    r_tan = np.concatenate(all_rad)
    d, _ = sdf_batch(scene, points)
    keep = d >= -1e-6
    points, normals, r_tan = points[keep], normals[keep], r_tan[keep]

    spin = rng.uniform(0.0, 2.0 * np.pi, points.shape[0])
    q_spin = np.zeros((points.shape[0], 4))
    q_spin[:, 0] = np.cos(spin / 2.0)
    q_spin[:, 3] = np.sin(spin / 2.0)
    quats = quat_mul(quat_align_z(normals), q_spin)

    scales = np.zeros((points.shape[0], 3))
    scales[:, :2] = r_tan[:, None]
    opacities = np.ones(points.shape[0])
    return SplatScene(points, scales, quats, opacities)


def _place_clutter(
    rng: np.random.Generator,
    count: int,
    region: tuple[float, float, float, float],
    base_z: float,
    max_h: float = 0.28,
) -> list[Primitive]:
    """Drop non-overlapping clutter objects onto a horizontal support region.

    ``region`` is (x_min, x_max, y_min, y_max) of allowed centre positions.
    """
    placed: list[tuple[float, float, float]] = []  # x, y, xy-footprint radius
    prims: list[Primitive] = []
    x0, x1, y0, y1 = region
    h_hi = min(0.28, max_h)
    h_lo = min(0.07, 0.6 * h_hi)
    for _ in range(count):
        for _attempt in range(60):
            x = rng.uniform(x0, x1)
            y = rng.uniform(y0, y1)
            if rng.uniform() < 0.5:
                dims = (rng.uniform(0.04, 0.13), rng.uniform(0.04, 0.13), rng.uniform(h_lo, h_hi))
                footprint = 0.5 * float(np.hypot(dims[0], dims[1]))
                pose = make_transform(rotz(rng.uniform(0.0, np.pi)), [x, y, base_z + dims[2] / 2.0])
                cand = Primitive(BOX, pose, dims)
            else:
                r = rng.uniform(0.02, 0.055)
                h = rng.uniform(h_lo, h_hi)
                footprint = r
                cand = Primitive(CYLINDER, make_transform(t=[x, y, base_z + h / 2.0]), (r, h))
            if all(np.hypot(x - px, y - py) >= footprint + pr + 0.01 for px, py, pr in placed):
                placed.append((x, y, footprint))
                prims.append(cand)
                break
        else:
            raise RuntimeError("could not place clutter without overlap; reduce clutter_count")
    return prims


def _wall_primitives(height: float = 1.4, thickness: float = 0.05) -> list[Primitive]:
    """Three room walls behind and beside the workspace (inner faces only)."""
    walls = [
        Primitive(BOX, make_transform(t=[1.45, 0.0, height / 2.0]), (thickness, 3.4, height),
                  faces="-x", sample_scale=COARSE_SCALE),
        Primitive(BOX, make_transform(t=[-0.9, 1.725, height / 2.0]), (4.6, thickness, height),
                  faces="-y", sample_scale=COARSE_SCALE),
        Primitive(BOX, make_transform(t=[-0.9, -1.725, height / 2.0]), (4.6, thickness, height),
                  faces="+y", sample_scale=COARSE_SCALE),
    ]
    return walls


def _target_hits_obstacles(scene: PrimitiveScene, points: np.ndarray, clearance: float) -> bool:
    d, _ = sdf_batch(scene, np.atleast_2d(points))
    return bool(np.any(d < clearance))


def _make_table_scene(spec: GeneratorSpec, rng: np.random.Generator) -> PrimitiveScene:
    width = rng.uniform(1.0, 1.3)
    depth = rng.uniform(0.65, 0.85)
    height = rng.uniform(0.68, 0.76)
    top_th = 0.04

    prims = [
        Primitive(BOX, make_transform(t=[0.0, 0.0, -0.05]), (6.4, 6.4, 0.1),
                  faces="top", sample_scale=COARSE_SCALE),
        Primitive(BOX, make_transform(t=[0.0, 0.0, height - top_th / 2.0]), (width, depth, top_th)),
    ]
    leg_r = 0.025
    leg_h = height - top_th
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            pos = [sx * (width / 2.0 - 0.06), sy * (depth / 2.0 - 0.06), leg_h / 2.0]
            prims.append(Primitive(CYLINDER, make_transform(t=pos), (leg_r, leg_h)))
    if spec.walls:
        prims.extend(_wall_primitives())

    base = PrimitiveScene(prims, np.eye(4))
    margin = 0.09
    region = (-width / 2.0 + margin, width / 2.0 - margin, -depth / 2.0 + margin, depth / 2.0 - margin)

    for _outer in range(12):
        try:
            clutter = _place_clutter(rng, spec.clutter_count, region, height)
        except RuntimeError:
            continue
        scene = PrimitiveScene(base.primitives + clutter, np.eye(4))
        for _try in range(50):
            tx = rng.uniform(region[0] + 0.03, region[1] - 0.03)
            ty = rng.uniform(region[2] + 0.03, region[3] - 0.03)
            tz = height + rng.uniform(0.14, 0.26)
            yaw = rng.uniform(-np.pi, np.pi)
            R = rotz(yaw) @ roty(np.pi)  # gripper axis pointing straight down
            pos = np.array([tx, ty, tz])
            probe = np.stack([pos, pos + [0.0, 0.0, 0.12], pos + [0.0, 0.0, 0.24]])
            if _target_hits_obstacles(scene, probe, clearance=0.07):
                continue
            # Some targets get a pair of tall flanking boxes forming a narrow
            # descent slot around the grasp column.  The slot is wide enough
            # for the wrist but punishes an off-centre greedy descent.
            flanks: list[Primitive] = []
            if rng.random() < 0.45:
                gap = rng.uniform(0.20, 0.26)
                fw = rng.uniform(0.12, 0.18)
                fd = rng.uniform(0.05, 0.08)
                fh = (tz - height) + rng.uniform(0.02, 0.10)
                fy = gap / 2.0 + fd / 2.0
                if region[2] <= ty - fy and ty + fy <= region[3]:
                    for sy in (-1.0, 1.0):
                        fpos = [tx + rng.uniform(-0.03, 0.03), ty + sy * fy, height + fh / 2.0]
                        flanks.append(Primitive(BOX, make_transform(t=fpos), (fw, fd, fh)))
            final = PrimitiveScene(scene.primitives + flanks, np.eye(4))
            final.target_pose = make_transform(R, pos)
            # Approach from the long edge nearest the target: from the far
            # edge the arm cannot span the table, and the base cannot follow
            # because its bumper ring stands off the tabletop.
            side = 1.0 if ty >= 0.0 else -1.0
            final.start_base_pose = _draw_start(rng, facing=pos[:2], around=side * np.pi / 2.0)
            final.metadata = {"kind": "table", "seed": spec.seed, "table_height": height}
            return final
    raise RuntimeError("failed to generate a feasible table scene; try another seed")


def _make_bookshelf_scene(spec: GeneratorSpec, rng: np.random.Generator) -> PrimitiveScene:
    width = rng.uniform(0.8, 1.0)  # along y
    depth = rng.uniform(0.3, 0.36)  # along x
    height = rng.uniform(1.25, 1.5)
    th = 0.02
    n_cells = int(rng.integers(3, 5))
    cell_h = (height - (n_cells + 1) * th) / n_cells

    prims = [Primitive(BOX, make_transform(t=[0.0, 0.0, -0.05]), (6.4, 6.4, 0.1),
                       faces="top", sample_scale=COARSE_SCALE)]
    for sy in (-1.0, 1.0):
        pos = [0.0, sy * (width - th) / 2.0, height / 2.0]
        prims.append(Primitive(BOX, make_transform(t=pos), (depth, th, height)))
    prims.append(Primitive(BOX, make_transform(t=[(depth - th) / 2.0, 0.0, height / 2.0]), (th, width, height)))
    board_tops: list[float] = []
    for k in range(n_cells + 1):
        z = th / 2.0 + k * (cell_h + th)
        prims.append(Primitive(BOX, make_transform(t=[0.0, 0.0, z]), (depth, width, th)))
        board_tops.append(z + th / 2.0)
    if spec.walls:
        prims.extend(_wall_primitives())

    base = PrimitiveScene(prims, np.eye(4))
    inner_y = width / 2.0 - th - 0.07
    # Clutter is spread over the usable boards (all but the topmost).
    usable = board_tops[:-1]

    for _outer in range(12):
        clutter: list[Primitive] = []
        counts = rng.multinomial(spec.clutter_count, np.full(len(usable), 1.0 / len(usable)))
        ok = True
        for top_z, cnt in zip(usable, counts):
            if cnt == 0:
                continue
            region = (-depth / 2.0 + 0.05, depth / 2.0 - th - 0.05, -inner_y, inner_y)
            try:
                clutter.extend(_place_clutter(rng, int(cnt), region, top_z, max_h=cell_h - 0.03))
            except RuntimeError:
                ok = False
                break
        if not ok:
            continue
        scene = PrimitiveScene(base.primitives + clutter, np.eye(4))
        for _try in range(60):
            cell = int(rng.integers(1, n_cells))  # skip the floor-level cell
            tz = board_tops[cell] + rng.uniform(0.10, max(0.11, cell_h - 0.10))
            tx = -depth / 2.0 + rng.uniform(0.08, 0.16)
            ty = rng.uniform(-inner_y + 0.05, inner_y - 0.05)
            yaw = rng.uniform(-0.25, 0.25)
            roll = rng.uniform(-np.pi, np.pi)
            R = rotz(yaw) @ roty(np.pi / 2.0) @ rotz(roll)  # gripper axis into the shelf
            pos = np.array([tx, ty, tz])
            approach = R[:, 2]
            probe = np.stack([pos, pos - 0.12 * approach, pos - 0.26 * approach])
            if _target_hits_obstacles(scene, probe, clearance=0.055):
                continue
            # Some targets get flanking boxes at the cell mouth, narrowing the
            # insertion corridor around the gripper column.
            flanks: list[Primitive] = []
            if rng.random() < 0.45:
                gap = rng.uniform(0.20, 0.26)
                fd = rng.uniform(0.04, 0.07)
                fw = rng.uniform(0.10, min(0.16, depth - th - 0.08))
                board = board_tops[cell]
                fh = min(cell_h - 0.03, (tz - board) + rng.uniform(0.04, 0.12))
                fy = gap / 2.0 + fd / 2.0
                if abs(ty) + fy + fd / 2.0 <= inner_y:
                    fx = -depth / 2.0 + 0.03 + fw / 2.0
                    for sy in (-1.0, 1.0):
                        fpos = [fx, ty + sy * fy, board + fh / 2.0]
                        flanks.append(Primitive(BOX, make_transform(t=fpos), (fw, fd, fh)))
            final = PrimitiveScene(scene.primitives + flanks, np.eye(4))
            final.target_pose = make_transform(R, pos)
            final.start_base_pose = _draw_start(rng, facing=pos[:2], around=np.pi)
            final.metadata = {"kind": "bookshelf", "seed": spec.seed, "cells": n_cells}
            return final
    raise RuntimeError("failed to generate a feasible bookshelf scene; try another seed")


def _draw_start(rng: np.random.Generator, facing: np.ndarray, around: float) -> np.ndarray:
    """Base start pose a couple of metres out on the approach side ``around``,
    roughly facing ``facing``."""
    bearing = around + rng.uniform(-0.35, 0.35)
    dist = rng.uniform(2.0, 2.5)
    x = facing[0] + dist * np.cos(bearing)
    y = facing[1] + dist * np.sin(bearing)
    theta = float(np.arctan2(facing[1] - y, facing[0] - x) + rng.uniform(-0.25, 0.25))
    return np.array([x, y, theta])


def generate_synthetic_scene(spec: GeneratorSpec) -> tuple[PrimitiveScene, SplatScene]:
    """Generate one scene: ground-truth primitives plus the splat rendering."""
    kind_code = {"table": 0, "bookshelf": 1}[spec.kind]
    rng = np.random.default_rng(np.random.SeedSequence([kind_code, spec.seed]))
    if spec.kind == "table":
        prim_scene = _make_table_scene(spec, rng)
    else:
        prim_scene = _make_bookshelf_scene(spec, rng)
    splat_scene = splats_from_primitives(prim_scene, spec.spacing, rng)
    return prim_scene, splat_scene


def inject_floaters(
    scene: SplatScene,
    n: int,
    seed: int,
    opacity_range: tuple[float, float] = (0.05, 0.5),
    scale_range: tuple[float, float] = (0.01, 0.025),
) -> SplatScene:
    """Add small isotropic phantom splats uniformly over the scene bounds."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return scene
    rng = np.random.default_rng(seed)
    lo, hi = scene.bounds
    means = rng.uniform(lo, hi, size=(n, 3))
    s = rng.uniform(scale_range[0], scale_range[1], size=n)
    scales = np.repeat(s[:, None], 3, axis=1)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    opac = rng.uniform(opacity_range[0], opacity_range[1], size=n)
    return SplatScene(
        np.concatenate([scene.means, means]),
        np.concatenate([scene.scales, scales]),
        np.concatenate([scene.quats, quats]),
        np.concatenate([scene.opacities, opac]),
    )
