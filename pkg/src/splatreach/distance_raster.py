"""Depth-rasterisation distance backend.

Each robot sphere carries a virtual sensor of six 90-degree depth cameras
whose optical axes point along the +-x, +-y, +-z sensor directions.  Splats
are composited per pixel in mean-depth order with median-depth termination:
a depth is recorded while the accumulated transmittance still exceeds one
half, so sparse low-opacity phantoms in front of a real surface do not
terminate rays on their own.

Two implementations share the per-hit kernels: :func:`rasterise_median_depth`
is the straightforward per-camera reference (also used for depth-map dumps),
and :func:`query_scene_raster` is a flat, fully vectorised pipeline over all
(sphere, camera, pixel, splat) hits that the controller uses.  The batched
path culls and bounds splats conservatively (exact projected-conic pixel
boxes, frustum tests with exact support extents, and a cull radius covering
the far plane out to the image corners), so both paths see the same hits and
accumulate them in the same order; their outputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distance import RASTER, DistanceResult
from .scene import EPS_THICKNESS, KIND_2D, SplatScene

DEFAULT_ALPHA_MIN = 1.0 / 255.0
DEFAULT_RESOLUTION = 16
FALLOFF = "falloff"
RAW_OPACITY = "raw-opacity"
#: Gaussian falloff drops below 1e-4 beyond this many sigmas, so culling with
#: this margin is lossless for any alpha_min >= 1e-4.
CULL_SIGMA = 4.3
#: Footprint (in sigmas) of a splat in ``raw-opacity`` mode, matching the
#: confidence ellipsoids of the geometric backend.
RAW_K_SIGMA = 2.0

_MODES = (FALLOFF, RAW_OPACITY)
_ALPHA_CAP = 1.0 - 1e-12  # keeps log-transmittance finite for opacity-1 splats
_LOG_RECORD = np.log(0.5)
_LOG_STOP = np.log(0.5 * (1.0 - 1e-6))


@dataclass(frozen=True)
class Intrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    @classmethod
    def square_fov90(cls, width: int = DEFAULT_RESOLUTION) -> "Intrinsics":
        """Square image with 90-degree horizontal and vertical field of view."""
        half = width / 2.0
        return cls(width, width, half, half, half, half)


@dataclass(frozen=True)
class VirtualSensor:
    pose: np.ndarray  # rigid world transform of the sensor frame
    radius: float
    intrinsics: Intrinsics

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("sensor radius must be positive")
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=float).reshape(4, 4))


@dataclass
class DepthMap:
    depths: np.ndarray  # (height, width), +inf where no return

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @property
    def height(self) -> int:
        return self.depths.shape[0]


_CAMERA_ROTATIONS = np.array(
    [
        [[1, 0, 0], [0, 1, 0], [0, 0, 1]],  # R_x(0): z
        [[1, 0, 0], [0, 0, -1], [0, 1, 0]],  # R_x(pi/2): -y
        [[1, 0, 0], [0, 0, 1], [0, -1, 0]],  # R_x(-pi/2): +y
        [[0, 0, 1], [0, 1, 0], [-1, 0, 0]],  # R_y(pi/2): +x
        [[-1, 0, 0], [0, 1, 0], [0, 0, -1]],  # R_y(pi): -z
        [[0, 0, -1], [0, 1, 0], [1, 0, 0]],  # R_y(3pi/2): -x
    ],
    dtype=float,
)

# The camera rotations are signed permutations, so world -> camera transforms
# reduce to exact index shuffles and sign flips: no rounding, which keeps the
# batched pipeline bit-identical to the per-camera reference.
_CAM_SRC = np.zeros((6, 3), dtype=np.int64)
_CAM_SGN = np.zeros((6, 3))
for _cam in range(6):
    for _i in range(3):
        _j = int(np.flatnonzero(_CAMERA_ROTATIONS[_cam][:, _i])[0])
        _CAM_SRC[_cam, _i] = _j
        _CAM_SGN[_cam, _i] = _CAMERA_ROTATIONS[_cam][_j, _i]

# Index/sign tables mapping the 6 packed symmetric-matrix slots
# (xx, yy, zz, xy, xz, yz) of a world covariance into camera frame.
_V6_PAIRS = np.array([[0, 0], [1, 1], [2, 2], [0, 1], [0, 2], [1, 2]])
_V6_SLOT = {(0, 0): 0, (1, 1): 1, (2, 2): 2, (0, 1): 3, (1, 0): 3, (0, 2): 4, (2, 0): 4, (1, 2): 5, (2, 1): 5}
_CAM_V6_SRC = np.zeros((6, 6), dtype=np.int64)
_CAM_V6_SGN = np.zeros((6, 6))
for _cam in range(6):
    for _slot, (_a, _b) in enumerate(_V6_PAIRS):
        _CAM_V6_SRC[_cam, _slot] = _V6_SLOT[(int(_CAM_SRC[_cam, _a]), int(_CAM_SRC[_cam, _b]))]
        _CAM_V6_SGN[_cam, _slot] = _CAM_SGN[_cam, _a] * _CAM_SGN[_cam, _b]


def camera_rotations() -> np.ndarray:
    """The six sensor-to-camera rotations; camera z-axes cover +-x, +-y, +-z."""
    return _CAMERA_ROTATIONS.copy()


def _match_canonical(R: np.ndarray) -> int | None:
    for cam in range(6):
        if np.array_equal(R, _CAMERA_ROTATIONS[cam]):
            return cam
    return None


def _pixel_dirs(intr: Intrinsics) -> np.ndarray:
    """Camera-frame ray directions through pixel centres, z-component 1; (H*W, 3)."""
    u = (np.arange(intr.width) + 0.5 - intr.cx) / intr.fx
    v = (np.arange(intr.height) + 0.5 - intr.cy) / intr.fy
    vv, uu = np.meshgrid(v, u, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)


def _corner_norm(intr: Intrinsics) -> float:
    """Largest |direction| over the image, relative to unit depth."""
    tx = max(abs((0.5 - intr.cx) / intr.fx), abs((intr.width - 0.5 - intr.cx) / intr.fx))
    ty = max(abs((0.5 - intr.cy) / intr.fy), abs((intr.height - 0.5 - intr.cy) / intr.fy))
    return float(np.sqrt(tx * tx + ty * ty + 1.0))


def _support_factor(opacities: np.ndarray, alpha_min: float, mode: str) -> np.ndarray:
    """Per-splat footprint radius in sigmas: where alpha can still reach alpha_min."""
    if mode == RAW_OPACITY:
        return np.where((opacities >= alpha_min) & (opacities > 0.0), RAW_K_SIGMA, 0.0)
    if alpha_min <= 0.0:
        return np.where(opacities > 0.0, CULL_SIGMA, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.sqrt(np.maximum(2.0 * np.log(opacities / alpha_min), 0.0))
    k = np.where(opacities >= alpha_min, k, 0.0)
    return np.minimum(k, CULL_SIGMA)


def _frames_2d(mu_c: np.ndarray, R_c: np.ndarray, scales: np.ndarray):
    """Camera-frame plane normal, scaled tangents, and mean projections per 2D splat."""
    flat = np.argmin(scales, axis=1)
    ar = np.arange(flat.size)
    t0 = (flat + 1) % 3
    t1 = (flat + 2) % 3
    nrm = R_c[ar, :, flat]
    w1 = R_c[ar, :, t0] / scales[ar, t0][:, None]
    w2 = R_c[ar, :, t1] / scales[ar, t1][:, None]
    pn = nrm[:, 0] * mu_c[:, 0] + nrm[:, 1] * mu_c[:, 1] + nrm[:, 2] * mu_c[:, 2]
    a1 = w1[:, 0] * mu_c[:, 0] + w1[:, 1] * mu_c[:, 1] + w1[:, 2] * mu_c[:, 2]
    a2 = w2[:, 0] * mu_c[:, 0] + w2[:, 1] * mu_c[:, 1] + w2[:, 2] * mu_c[:, 2]
    return nrm, w1, w2, pn, a1, a2


def _frames_3d(mu_c: np.ndarray, R_c: np.ndarray, scales: np.ndarray):
    """Whitening rows (axis / sigma) and whitened mean per 3D splat."""
    sc = np.maximum(scales, 1e-12)
    b1 = R_c[:, :, 0] / sc[:, 0][:, None]
    b2 = R_c[:, :, 1] / sc[:, 1][:, None]
    b3 = R_c[:, :, 2] / sc[:, 2][:, None]
    bm = np.stack(
        [
            b1[:, 0] * mu_c[:, 0] + b1[:, 1] * mu_c[:, 1] + b1[:, 2] * mu_c[:, 2],
            b2[:, 0] * mu_c[:, 0] + b2[:, 1] * mu_c[:, 1] + b2[:, 2] * mu_c[:, 2],
            b3[:, 0] * mu_c[:, 0] + b3[:, 1] * mu_c[:, 1] + b3[:, 2] * mu_c[:, 2],
        ],
        axis=1,
    )
    return b1, b2, b3, bm


def _hits_2d(nrm, w1, w2, pn, a1, a2, dx, dy, dz):
    """Ray-plane hit depth and squared scaled tangent offset; broadcasts.

    The tangent offset of the hit point h = z*d is w.(h - mu) = z*(w.d) - w.mu,
    so each pixel needs only the three direction dot products.
    """
    den = nrm[..., 0] * dx + nrm[..., 1] * dy + nrm[..., 2] * dz
    with np.errstate(divide="ignore", invalid="ignore"):
        z = pn / den
        uc = z * (w1[..., 0] * dx + w1[..., 1] * dy + w1[..., 2] * dz) - a1
        vc = z * (w2[..., 0] * dx + w2[..., 1] * dy + w2[..., 2] * dz) - a2
        rho2 = uc * uc + vc * vc
    bad = ~(np.abs(den) > 1e-12) | ~np.isfinite(z)
    z = np.where(bad, np.nan, z)
    rho2 = np.where(bad | ~np.isfinite(rho2), np.inf, rho2)
    return z, rho2


def _hits_3d(bm, b1, b2, b3, dx, dy, dz):
    """Maximum-density depth along the ray and its whitened offset; broadcasts."""
    bdx = b1[..., 0] * dx + b1[..., 1] * dy + b1[..., 2] * dz
    bdy = b2[..., 0] * dx + b2[..., 1] * dy + b2[..., 2] * dz
    bdz = b3[..., 0] * dx + b3[..., 1] * dy + b3[..., 2] * dz
    den = bdx * bdx + bdy * bdy + bdz * bdz
    z = (bdx * bm[..., 0] + bdy * bm[..., 1] + bdz * bm[..., 2]) / den
    wx = z * bdx - bm[..., 0]
    wy = z * bdy - bm[..., 1]
    wz = z * bdz - bm[..., 2]
    return z, wx * wx + wy * wy + wz * wz


def _alphas(opacity: np.ndarray, rho2: np.ndarray, mode: str) -> np.ndarray:
    if mode == FALLOFF:
        return opacity * np.exp(-0.5 * rho2)
    return np.where(rho2 <= RAW_K_SIGMA**2, opacity, 0.0)


def rasterise_median_depth(
    scene: SplatScene,
    camera_pose: np.ndarray,
    intrinsics: Intrinsics,
    alpha_min: float = DEFAULT_ALPHA_MIN,
    mode: str = FALLOFF,
    near: float = 1e-6,
    far: float = np.inf,
) -> DepthMap:
    """Reference median-depth rasterisation of the whole scene for one camera.

    Splats are composited in mean-depth order; a pixel records the depth of
    every hit seen while its transmittance is still above one half and keeps
    the last one.  Hits outside (near, far) or below ``alpha_min`` neither
    record nor attenuate.
    """
    if not 0.0 <= alpha_min < 1.0:
        raise ValueError("alpha_min must lie in [0, 1)")
    if mode not in _MODES:
        raise ValueError(f"unknown rasterisation mode {mode!r}")
    camera_pose = np.asarray(camera_pose, dtype=float).reshape(4, 4)
    R_cam = camera_pose[:3, :3]
    origin = camera_pose[:3, 3]
    n_pix = intrinsics.width * intrinsics.height
    depth = np.full(n_pix, np.inf)
    if len(scene) == 0:
        return DepthMap(depth.reshape(intrinsics.height, intrinsics.width))

    rel = scene.means - origin
    cam = _match_canonical(R_cam)
    if cam is not None:
        mu_c = rel[:, _CAM_SRC[cam]] * _CAM_SGN[cam]
        R_c = scene.rotmats[:, _CAM_SRC[cam], :] * _CAM_SGN[cam][:, None]
    else:
        mu_c = rel @ R_cam
        R_c = np.einsum("ji,njk->nik", R_cam, scene.rotmats)

    dirs = _pixel_dirs(intrinsics)
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    is_2d = scene.kinds == KIND_2D
    nrm, w1, w2, pn, a1, a2 = _frames_2d(mu_c, R_c, scene.scales)
    b1, b2, b3, bm = _frames_3d(mu_c, R_c, scene.scales)

    order = np.argsort(mu_c[:, 2], kind="stable")
    log_t = np.zeros(n_pix)
    for i in order:
        if is_2d[i]:
            z, rho2 = _hits_2d(nrm[i], w1[i], w2[i], pn[i], a1[i], a2[i], dx, dy, dz)
        else:
            z, rho2 = _hits_3d(bm[i], b1[i], b2[i], b3[i], dx, dy, dz)
        alpha = np.minimum(_alphas(scene.opacities[i], rho2, mode), _ALPHA_CAP)
        hit = (alpha >= alpha_min) & (alpha > 0.0) & (z > near) & (z < far)
        if not np.any(hit):
            continue
        record = hit & (log_t > _LOG_RECORD)
        depth[record] = z[record]
        log_t[hit] += np.log1p(-alpha[hit])
        if np.all(log_t <= _LOG_STOP):
            break
    return DepthMap(depth.reshape(intrinsics.height, intrinsics.width))


def sensor_distance(
    scene: SplatScene,
    sensor: VirtualSensor,
    d_i: float,
    alpha_min: float = DEFAULT_ALPHA_MIN,
    mode: str = FALLOFF,
    sphere_id: int = 0,
) -> list[DistanceResult]:
    """Per-camera closest obstacle distances for one virtual sensor.

    Each camera rasterises with far clip ``d_i + radius``, backprojects every
    finite pixel, and reports the smallest point norm minus the sphere
    radius.  Cameras with no finite pixel, or with a distance beyond ``d_i``,
    yield no result.
    """
    if d_i <= 0.0:
        raise ValueError("d_i must be positive")
    far = d_i + sensor.radius
    dirs_cam = _pixel_dirs(sensor.intrinsics)
    norms = np.sqrt(dirs_cam[:, 0] ** 2 + dirs_cam[:, 1] ** 2 + dirs_cam[:, 2] ** 2)
    results: list[DistanceResult] = []
    for cam in range(6):
        pose = sensor.pose @ _embed(_CAMERA_ROTATIONS[cam])
        dm = rasterise_median_depth(scene, pose, sensor.intrinsics, alpha_min, mode, far=far)
        flat = dm.depths.ravel()
        finite = np.isfinite(flat)
        if not np.any(finite):
            continue
        point_dist = np.where(finite, flat * norms, np.inf)
        pix = int(np.argmin(point_dist))
        d = float(point_dist[pix]) - sensor.radius
        if d > d_i:
            continue
        grad = pose[:3, :3] @ (dirs_cam[pix] / norms[pix])
        results.append(DistanceResult(d, grad, sphere_id, RASTER, camera_id=cam))
    return results


def _embed(R: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    return T


def _conic_pixel_bounds(mu_a, mu_z, v_aa, v_az, v_zz, f, c, size):
    """Exact pixel extent of the projected support ellipsoid along one axis.

    Solves the tangency quadratic for the extreme coordinate ratios a/z over
    the ellipsoid (mu, V); rows whose support crosses the camera plane get
    the full axis.  Returns inclusive integer pixel bounds (possibly empty).
    """
    m_zz = mu_z * mu_z - v_zz
    m_aa = mu_a * mu_a - v_aa
    m_az = mu_a * mu_z - v_az
    full = m_zz <= 0.0
    safe = np.where(full, 1.0, m_zz)
    rt = np.sqrt(np.maximum(m_az * m_az - m_aa * safe, 0.0))
    t_lo = (m_az - rt) / safe
    t_hi = (m_az + rt) / safe
    lo = f * t_lo + c - 0.5
    hi = f * t_hi + c - 0.5
    p0 = np.where(full, 0, np.ceil(lo - 1e-6)).astype(np.int64)
    p1 = np.where(full, size - 1, np.floor(hi + 1e-6)).astype(np.int64)
    return np.maximum(p0, 0), np.minimum(p1, size - 1)


def query_scene_raster(
    scene: SplatScene,
    positions: np.ndarray,
    radii: np.ndarray,
    d_i: float,
    intrinsics: Intrinsics | None = None,
    alpha_min: float = DEFAULT_ALPHA_MIN,
    mode: str = FALLOFF,
) -> list[DistanceResult]:
    """Batched sensor distances for all robot spheres (world-axis-aligned sensors).

    Bit-identical to running :func:`sensor_distance` with an identity
    orientation sensor at every sphere centre, but processes every
    (sphere, camera, pixel, splat) hit in one flat pipeline.
    """
    if d_i <= 0.0:
        raise ValueError("d_i must be positive")
    if not 0.0 <= alpha_min < 1.0:
        raise ValueError("alpha_min must lie in [0, 1)")
    if mode not in _MODES:
        raise ValueError(f"unknown rasterisation mode {mode!r}")
    intr = intrinsics or Intrinsics.square_fov90()
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    n_sensors = positions.shape[0]
    if n_sensors == 0 or len(scene) == 0:
        return []
    near = 1e-6
    W, H = intr.width, intr.height
    n_pix = W * H
    corner = _corner_norm(intr)

    # --- candidate (sensor, splat) pairs -------------------------------------
    # A splat can attenuate a ray whenever its hit depth is inside (near, far);
    # such hit points can lie out to far * |corner direction|, so the cull
    # radius must cover that, not just d_i + radius.  One box query over the
    # whole sphere set replaces per-sphere index walks; the exact ball test
    # below keeps the same rows as cull_splats.
    support = _support_factor(scene.opacities, alpha_min, mode)
    pad = CULL_SIGMA * np.maximum(scene.max_scales, EPS_THICKNESS)
    rad = corner * (d_i + radii)
    reach = float(rad.max() + pad.max())
    cand = scene.index.query_box(positions.min(axis=0) - reach, positions.max(axis=0) + reach)
    if cand.size:
        cand = cand[support[cand] > 0.0]
    if cand.size == 0:
        return []
    cand.sort()
    mc = scene.means[cand]
    bc = pad[cand]
    pair_s: list[np.ndarray] = []
    pair_i: list[np.ndarray] = []
    for j in range(n_sensors):
        ox = mc[:, 0] - positions[j, 0]
        oy = mc[:, 1] - positions[j, 1]
        oz = mc[:, 2] - positions[j, 2]
        bj = rad[j] + bc
        sel = np.flatnonzero(ox * ox + oy * oy + oz * oz <= bj * bj)
        if sel.size:
            pair_s.append(np.full(sel.size, j, dtype=np.int64))
            pair_i.append(cand[sel])
    if not pair_s:
        return []
    SJ = np.concatenate(pair_s)
    SI = np.concatenate(pair_i)
    rel = scene.means[SI] - positions[SJ]
    far_pair = d_i + radii[SJ]

    # Per-splat support covariance (k sigma)^2 in world frame, packed 6-vector
    # (xx, yy, zz, xy, xz, yz); shared across the sensors that see the splat.
    seen = np.zeros(len(scene), dtype=bool)
    seen[SI] = True
    uniq = np.flatnonzero(seen)
    slot = np.zeros(len(scene), dtype=np.int64)
    slot[uniq] = np.arange(uniq.size)
    inv = slot[SI]
    R_u = scene.rotmats[uniq]
    scl_u = scene.scales[uniq]
    ks = ((support[uniq][:, None] + 1e-7) * scl_u) * (1.0 + 1e-9)
    Vw = np.einsum("nij,nj,nkj->nik", R_u, ks * ks, R_u)
    V6_u = np.stack([Vw[:, 0, 0], Vw[:, 1, 1], Vw[:, 2, 2], Vw[:, 0, 1], Vw[:, 0, 2], Vw[:, 1, 2]], axis=1)
    # Support extents along the world axes; camera-frame extents are exact
    # permutations of these because the camera rotations are signed
    # permutations (the off-diagonal signs square away on the diagonal).
    E_pair = np.sqrt(np.maximum(V6_u[:, :3], 0.0))[inv]

    # World-frame whitening vectors per unique splat (the argmin/divisions of
    # _frames_2d/_frames_3d, done once per splat); camera frames below are
    # exact signed permutations of these.
    two_u = scene.kinds[uniq] == KIND_2D
    V1u = np.empty((uniq.size, 3))
    V2u = np.empty((uniq.size, 3))
    V3u = np.empty((uniq.size, 3))
    i2 = np.flatnonzero(two_u)
    if i2.size:
        sc2 = scl_u[i2]
        flat = np.argmin(sc2, axis=1)
        ar = np.arange(i2.size)
        t0 = (flat + 1) % 3
        t1 = (flat + 2) % 3
        R2 = R_u[i2]
        V1u[i2] = R2[ar, :, flat]
        V2u[i2] = R2[ar, :, t0] / sc2[ar, t0][:, None]
        V3u[i2] = R2[ar, :, t1] / sc2[ar, t1][:, None]
    i3 = np.flatnonzero(~two_u)
    if i3.size:
        sc3 = np.maximum(scl_u[i3], 1e-12)
        R3 = R_u[i3]
        V1u[i3] = R3[:, :, 0] / sc3[:, 0][:, None]
        V2u[i3] = R3[:, :, 1] / sc3[:, 1][:, None]
        V3u[i3] = R3[:, :, 2] / sc3[:, 2][:, None]

    # --- frustum assignment and exact projected pixel boxes per camera -------
    # The six cameras differ only by axis permutation and sign, so the test
    # quantities reduce to three per-axis arrays shared across all cameras:
    # hi = rel + E (z-top for the + camera), lo = E - rel (z-top for the -
    # camera, and the negated far-plane margin of the + camera), and
    # |rel| - E (the common x/y half-angle test).  Every comparison below is
    # bit-identical to evaluating the signed camera-frame quantities directly.
    ax_hi = [rel[:, s] + E_pair[:, s] for s in range(3)]
    ax_lo = [E_pair[:, s] - rel[:, s] for s in range(3)]
    ax_abs = [np.abs(rel[:, s]) - E_pair[:, s] for s in range(3)]
    neg_far = -far_pair
    f_pair: list[np.ndarray] = []
    f_cam: list[np.ndarray] = []
    f_mu: list[np.ndarray] = []
    f_box: list[np.ndarray] = []
    for cam in range(6):
        sx, sy, sz = _CAM_SRC[cam]
        gx, gy, gz = _CAM_SGN[cam]
        ztop = ax_hi[sz] if gz > 0.0 else ax_lo[sz]
        zneg = ax_lo[sz] if gz > 0.0 else ax_hi[sz]
        keep = (ztop > near) & (zneg >= neg_far)
        keep &= ax_abs[sx] <= ztop
        keep &= ax_abs[sy] <= ztop
        rows = np.flatnonzero(keep)
        if not rows.size:
            continue
        V6_k = V6_u[inv[rows]][:, _CAM_V6_SRC[cam]] * _CAM_V6_SGN[cam]
        mu_k = np.stack([rel[rows, sx] * gx, rel[rows, sy] * gy, rel[rows, sz] * gz], axis=1)
        u0, u1 = _conic_pixel_bounds(mu_k[:, 0], mu_k[:, 2], V6_k[:, 0], V6_k[:, 4], V6_k[:, 2], intr.fx, intr.cx, W)
        v0, v1 = _conic_pixel_bounds(mu_k[:, 1], mu_k[:, 2], V6_k[:, 1], V6_k[:, 5], V6_k[:, 2], intr.fy, intr.cy, H)
        nonempty = (u0 <= u1) & (v0 <= v1)
        if not np.any(nonempty):
            continue
        f_pair.append(rows[nonempty])
        f_cam.append(np.full(int(nonempty.sum()), cam, dtype=np.int64))
        f_mu.append(mu_k[nonempty])
        f_box.append(np.stack([u0[nonempty], u1[nonempty], v0[nonempty], v1[nonempty]], axis=1).astype(np.int32))
    if not f_pair:
        return []
    FP = np.concatenate(f_pair)
    FC = np.concatenate(f_cam)
    FMU = np.concatenate(f_mu)
    FBOX = np.concatenate(f_box)

    # Presort frustum rows by ((camera, sensor), mean depth, splat index): the
    # reference composites each image in exactly that per-splat order, and
    # expansion below then emits every pixel's hits already rank-ordered.
    # Camera-major grouping keeps the camera blocks contiguous.
    # Within each (camera, sensor) group the rows already appear in ascending
    # splat order (candidates were visited sorted), and lexsort is stable, so
    # equal depths fall back to splat order without a third key.
    grp0 = FC * n_sensors + SJ[FP]
    order_f = np.lexsort((FMU[:, 2], grp0))
    FP = FP[order_f]
    FC = FC[order_f]
    FMU = FMU[order_f]
    FBOX = FBOX[order_f]
    n_frust = FP.size
    f_splat = SI[FP]
    f_far = far_pair[FP]
    grp_f = grp0[order_f]
    fu = inv[FP]
    opac = scene.opacities[f_splat]
    is2d_f = two_u[fu]

    # Whitening vectors per frustum row, permuted into each camera block.
    W1 = V1u[fu]
    W2 = V2u[fu]
    W3 = V3u[fu]
    stops = np.searchsorted(FC, np.arange(7))
    for cam in range(6):
        a, b = int(stops[cam]), int(stops[cam + 1])
        if b > a:
            src = _CAM_SRC[cam]
            sgn = _CAM_SGN[cam]
            W1[a:b] = W1[a:b][:, src] * sgn
            W2[a:b] = W2[a:b][:, src] * sgn
            W3[a:b] = W3[a:b][:, src] * sgn

    # --- pixel expansion ------------------------------------------------------
    wu = FBOX[:, 1] - FBOX[:, 0] + 1
    wv = FBOX[:, 3] - FBOX[:, 2] + 1
    counts = wu * wv
    total = int(counts.sum(dtype=np.int64))
    if total == 0:
        return []
    idt = np.int32 if total < 2**31 else np.int64
    counts = counts.astype(idt)
    rep = np.repeat(np.arange(n_frust, dtype=idt), counts)
    local = np.arange(total, dtype=idt) - np.repeat(np.cumsum(counts, dtype=idt) - counts, counts)
    uu = np.ascontiguousarray(FBOX[:, 0])[rep] + local % wu[rep]
    vv = np.ascontiguousarray(FBOX[:, 2])[rep] + local // wu[rep]
    dxs = (np.arange(W) + 0.5 - intr.cx) / intr.fx
    dys = (np.arange(H) + 0.5 - intr.cy) / intr.fy
    dx = dxs[uu]
    dy = dys[vv]

    n2d = int(np.count_nonzero(is2d_f))
    if n2d == n_frust:
        pn = W1[:, 0] * FMU[:, 0] + W1[:, 1] * FMU[:, 1] + W1[:, 2] * FMU[:, 2]
        a1 = W2[:, 0] * FMU[:, 0] + W2[:, 1] * FMU[:, 1] + W2[:, 2] * FMU[:, 2]
        a2 = W3[:, 0] * FMU[:, 0] + W3[:, 1] * FMU[:, 1] + W3[:, 2] * FMU[:, 2]
        z, rho2 = _hits_2d(W1[rep], W2[rep], W3[rep], pn[rep], a1[rep], a2[rep], dx, dy, 1.0)
    elif n2d == 0:
        bm = np.stack(
            [
                W1[:, 0] * FMU[:, 0] + W1[:, 1] * FMU[:, 1] + W1[:, 2] * FMU[:, 2],
                W2[:, 0] * FMU[:, 0] + W2[:, 1] * FMU[:, 1] + W2[:, 2] * FMU[:, 2],
                W3[:, 0] * FMU[:, 0] + W3[:, 1] * FMU[:, 1] + W3[:, 2] * FMU[:, 2],
            ],
            axis=1,
        )
        z, rho2 = _hits_3d(bm[rep], W1[rep], W2[rep], W3[rep], dx, dy, 1.0)
    else:
        z = np.empty(total)
        rho2 = np.empty(total)
        m2 = is2d_f[rep]
        pn = W1[:, 0] * FMU[:, 0] + W1[:, 1] * FMU[:, 1] + W1[:, 2] * FMU[:, 2]
        a1 = W2[:, 0] * FMU[:, 0] + W2[:, 1] * FMU[:, 1] + W2[:, 2] * FMU[:, 2]
        a2 = W3[:, 0] * FMU[:, 0] + W3[:, 1] * FMU[:, 1] + W3[:, 2] * FMU[:, 2]
        r2 = np.flatnonzero(m2)
        g = rep[r2]
        z[r2], rho2[r2] = _hits_2d(W1[g], W2[g], W3[g], pn[g], a1[g], a2[g], dx[r2], dy[r2], 1.0)
        bm = np.stack([pn, a1, a2], axis=1)
        r3 = np.flatnonzero(~m2)
        g = rep[r3]
        z[r3], rho2[r3] = _hits_3d(bm[g], W1[g], W2[g], W3[g], dx[r3], dy[r3], 1.0)

    alpha = np.minimum(_alphas(opac[rep], rho2, mode), _ALPHA_CAP)
    valid = (alpha >= alpha_min) & (alpha > 0.0) & (z > near) & (z < f_far[rep])
    rows = np.flatnonzero(valid)
    if not rows.size:
        return []

    # --- per-pixel compositing in mean-depth order ----------------------------
    # Rows are already rank-ordered within each (camera, sensor) group, so a
    # stable sort by pixel yields each pixel's hits in compositing order.
    fr = rep[rows]
    gp = grp_f[fr] * n_pix + (vv[rows] * W + uu[rows]).astype(np.int64)
    order = np.argsort(gp, kind="stable")
    gp = gp[order]
    z_s = z[rows][order]
    log_t = np.log1p(-alpha[rows][order])

    seg_starts = np.flatnonzero(np.concatenate(([True], gp[1:] != gp[:-1])))
    seg_lens = np.diff(np.concatenate((seg_starts, [gp.size])))
    # Sequential per-pixel accumulation, level by level, reproducing the
    # reference's addition order exactly (global prefix sums would round
    # differently at record-threshold boundaries).
    log_before = np.empty(gp.size)
    acc = np.zeros(seg_starts.size)
    for k in range(int(seg_lens.max())):
        seg = np.flatnonzero(seg_lens > k)
        idx = seg_starts[seg] + k
        log_before[idx] = acc[seg]
        acc[seg] += log_t[idx]
    recorded = log_before > _LOG_RECORD
    idx = np.where(recorded, np.arange(gp.size), -1)
    last = np.maximum.reduceat(idx, seg_starts)
    have = last >= 0
    if not np.any(have):
        return []
    pix_gp = gp[seg_starts[have]]
    pix_depth = z_s[last[have]]

    # --- backproject and reduce to one result per (sensor, camera) ------------
    pu = pix_gp % W
    pv = (pix_gp // W) % H
    skey = pix_gp // n_pix  # camera * n_sensors + sensor
    nx = dxs[pu]
    ny = dys[pv]
    norms = np.sqrt(nx**2 + ny**2 + 1.0)
    pdist = pix_depth * norms

    order2 = np.lexsort((pix_gp, pdist, skey))
    ks = skey[order2]
    best = order2[np.concatenate(([True], ks[1:] != ks[:-1]))]
    cams = skey[best] // n_sensors
    sensor_ids = skey[best] % n_sensors
    dist = pdist[best] - radii[sensor_ids]
    # Sensor-frame ray direction through the winning pixel, rotated into world
    # axes by the exact signed permutation of its camera.
    dirs = np.stack([nx[best], ny[best], np.ones(best.size)], axis=1) / norms[best][:, None]
    grads = np.zeros((best.size, 3))
    grads[np.arange(best.size)[:, None], _CAM_SRC[cams]] = _CAM_SGN[cams] * dirs
    results: list[DistanceResult] = []
    for k in np.lexsort((cams, sensor_ids)):
        if dist[k] > d_i:
            continue
        results.append(DistanceResult(float(dist[k]), grads[k], int(sensor_ids[k]), RASTER, camera_id=int(cams[k])))
    return results
