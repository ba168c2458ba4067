"""Reactive QP controller: one velocity command per call.

Decision variable x = (qdot, delta): generalised velocities of the holistic
model plus a 6-vector of slack on the end-effector twist equality.  The QP

    min 1/2 x' diag(lambda_q I, lambda_delta I) x + c' x
    s.t. [J_e | I6] x = v_e,   A_c x <= b_c,   velocity box on qdot

tracks the servo twist while velocity dampers bound the approach speed
toward every nearby obstacle.  The linear cost c stacks the manipulability
gradient, a base-heading term, and (optionally) the active collision cost
recycled from the damper rows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Any, Optional

import numpy as np

from .distance import BACKENDS, GEOMETRIC, GT_SDF, RASTER, DistanceResult
from .distance_geometric import query_scene_geometric
from .distance_raster import DEFAULT_ALPHA_MIN, FALLOFF, Intrinsics, query_scene_raster
from .distance import query_scene_sdf
from .kinematics import RobotModel, RobotState, _ee_jacobian, _kin_cache, _point_jacobian, manipulability_jacobian
from .qp import OPTIMAL, QPProblem, solve_qp
from .scene import DEFAULT_K_SIGMA
from .transforms import rotation_error, wrap_angle


@dataclass
class ControllerConfig:
    """Gains, distances, and solver settings for the reactive controller."""

    k_e: float = 1.5
    twist_cap_linear: float = 1.0
    twist_cap_angular: float = 2.0
    lambda_q: float = 0.1
    lambda_delta: float = 1000.0  # 1e4 * lambda_q: slack heavily penalised
    k_m: float = 0.01
    k_o: float = 0.3
    d_i: float = 0.3
    d_s: float = 0.02
    eta: float = 1.0
    beta_max: float = 1.0
    active_collision_cost: bool = True
    tol_t: float = 0.02
    tol_r: float = 0.035
    opacity_min: float = 0.0
    k_sigma: float = DEFAULT_K_SIGMA
    raster_resolution: int = 16
    alpha_min: float = DEFAULT_ALPHA_MIN
    raster_mode: str = FALLOFF
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    limit_buffer: float = 0.02
    limit_influence: float = 0.15

    def __post_init__(self) -> None:
        if not self.d_i > self.d_s >= 0.0:
            raise ValueError("require d_i > d_s >= 0")
        for name in ("k_e", "lambda_q", "lambda_delta", "k_m", "k_o", "eta", "beta_max"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ControllerConfig":
        return cls(**data)


@dataclass
class ControlOutput:
    qd: np.ndarray
    delta: np.ndarray
    status: str  # QP status; "optimal" means qd is the solved command
    n_active: int
    min_distance: float  # +inf when nothing within the influence distance
    qp_time: float
    qp_iterations: int
    manipulability: float


def servo_twist(current: np.ndarray, target: np.ndarray, k_e: float, cap: tuple[float, float]) -> np.ndarray:
    """Proportional log-map twist toward the target pose, per-component clamped."""
    current = np.asarray(current, dtype=float)
    target = np.asarray(target, dtype=float)
    err_t = target[:3, 3] - current[:3, 3]
    err_r = rotation_error(current[:3, :3], target[:3, :3])
    v = k_e * np.concatenate([err_t, err_r])
    v[:3] = np.clip(v[:3], -cap[0], cap[0])
    v[3:] = np.clip(v[3:], -cap[1], cap[1])
    return v


def build_damper_constraints(
    results: list[DistanceResult],
    point_jacobians: list[np.ndarray],
    d_i: float,
    d_s: float,
    eta: float,
    n_dof: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Velocity-damper rows: approach speed toward each obstacle <= damped bound.

    Each row is ``[grad' J_v, 0-pad, zeros(6)]`` with right-hand side
    ``eta (d - d_s) / (d_i - d_s)``; a penetrating result keeps its row with
    a negative bound, forcing retreat.
    """
    if not d_i > d_s:
        raise ValueError("require d_i > d_s")
    n = len(results)
    A = np.zeros((n, n_dof + 6))
    b = np.empty(n)
    for r, (res, J) in enumerate(zip(results, point_jacobians)):
        A[r, : J.shape[1]] = res.grad @ J
        b[r] = eta * (res.d - d_s) / (d_i - d_s)
    return A, b


def build_active_collision_cost(
    A_c: np.ndarray,
    b_c: np.ndarray,
    d_i: float,
    d_s: float,
    beta_max: float,
    eta: float = 1.0,
) -> np.ndarray:
    """Proximity-weighted average of the damper rows, scaled by a dynamic gain.

    Weights ``w = (d_i - d) / (d_i - d_s)`` are recovered from the damper
    right-hand sides (``w = 1 - b/eta``), so no extra scene queries happen.
    """
    n_cols = A_c.shape[1] if A_c.ndim == 2 else 0
    if A_c.shape[0] == 0:
        return np.zeros(n_cols)
    w = 1.0 - np.asarray(b_c) / eta
    total = float(w.sum())
    if total <= 0.0:
        return np.zeros(n_cols)
    beta = beta_max * min(max(float(w.max()), 0.0), 1.0)
    return beta * (w @ A_c) / total


def base_orientation_cost(state: RobotState, target_pose: np.ndarray, k_o: float, n_dof: int) -> np.ndarray:
    """Linear cost turning the base toward the target's ground-plane bearing.

    The cost is ``-k_o alpha`` on the virtual base-rotation coordinate, where
    ``alpha`` is the signed heading error; it ramps down when the base is
    nearly under the target so the base does not spin during the final reach.
    """
    c = np.zeros(n_dof + 6)
    to_target = np.asarray(target_pose, dtype=float)[:2, 3] - state.base[:2]
    dist = float(np.hypot(to_target[0], to_target[1]))
    if dist < 1e-9:
        return c
    alpha = wrap_angle(np.arctan2(to_target[1], to_target[0]) - state.base[2])
    c[1] = -k_o * alpha * min(1.0, dist / 0.3)
    return c


def query_backend(
    scene,
    backend: str,
    positions: np.ndarray,
    radii: np.ndarray,
    config: ControllerConfig,
) -> list[DistanceResult]:
    """Run the configured distance backend over all robot spheres."""
    if backend == GEOMETRIC:
        return query_scene_geometric(
            scene, positions, radii, config.d_i, opacity_min=config.opacity_min, k_sigma=config.k_sigma
        )
    if backend == RASTER:
        return query_scene_raster(
            scene,
            positions,
            radii,
            config.d_i,
            intrinsics=Intrinsics.square_fov90(config.raster_resolution),
            alpha_min=config.alpha_min,
            mode=config.raster_mode,
        )
    if backend == GT_SDF:
        return query_scene_sdf(scene, positions, radii, config.d_i)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def _velocity_box(model: RobotModel, state: RobotState, config: ControllerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric velocity limits, tightened to zero as joints approach position limits."""
    lim = model.velocity_limits
    ub = np.concatenate([lim, np.full(6, np.inf)])
    lb = -ub
    buf, infl = config.limit_buffer, config.limit_influence
    up_margin = (model.q_upper - state.q - buf) / infl
    lo_margin = (state.q - model.q_lower - buf) / infl
    ub[2 : 2 + model.n_arm] = lim[2:] * np.clip(up_margin, 0.0, 1.0)
    lb[2 : 2 + model.n_arm] = -lim[2:] * np.clip(lo_margin, 0.0, 1.0)
    return lb, ub


def control_step(
    model: RobotModel,
    state: RobotState,
    target: np.ndarray,
    scene,
    backend: str,
    config: ControllerConfig,
) -> ControlOutput:
    """Assemble and solve one reactive QP step.

    ``scene`` is the splat scene for the geometric/raster backends and the
    ground-truth primitive scene for gt-sdf.  An infeasible or unconverged QP
    returns zero velocities with the solver status (fail-safe stop).
    """
    n_dof = model.n_dof
    cache = _kin_cache(model, state)
    J_e = _ee_jacobian(model, cache)
    v_e = servo_twist(cache.T_ee, target, config.k_e, (config.twist_cap_linear, config.twist_cap_angular))

    spheres = model.spheres
    positions = np.empty((len(spheres), 3))
    for link in np.unique(spheres.links):
        mask = spheres.links == link
        T = cache.link_poses[link]
        positions[mask] = spheres.offsets[mask] @ T[:3, :3].T + T[:3, 3]

    results = query_backend(scene, backend, positions, spheres.radii, config)
    jacobians = [
        _point_jacobian(model, cache, int(spheres.links[r.sphere_id]), positions[r.sphere_id]) for r in results
    ]
    A_c, b_c = build_damper_constraints(results, jacobians, config.d_i, config.d_s, config.eta, n_dof)

    if config.k_m > 0.0:
        m, J_m = manipulability_jacobian(model, state)
    else:
        m, J_m = 0.0, np.zeros(n_dof)
    c = np.concatenate([-config.k_m * J_m, np.zeros(6)])
    c += base_orientation_cost(state, target, config.k_o, n_dof)
    if config.active_collision_cost and A_c.shape[0]:
        c += build_active_collision_cost(A_c, b_c, config.d_i, config.d_s, config.beta_max, config.eta)

    Q = np.diag(np.concatenate([np.full(n_dof, config.lambda_q), np.full(6, config.lambda_delta)]))
    A_eq = np.concatenate([J_e, np.eye(6)], axis=1)
    lb, ub = _velocity_box(model, state, config)

    problem = QPProblem(
        Q, c, A_eq, v_e, A_c if A_c.shape[0] else None, b_c if A_c.shape[0] else None, lb, ub
    )
    t0 = time.perf_counter()
    sol = solve_qp(problem, tol=config.qp_tol, max_iter=config.qp_max_iter)
    qp_time = time.perf_counter() - t0

    if sol.status == OPTIMAL:
        qd = sol.x[:n_dof]
        delta = sol.x[n_dof:]
    else:
        qd = np.zeros(n_dof)
        delta = np.zeros(6)
    min_d = min((r.d for r in results), default=np.inf)
    return ControlOutput(
        qd=qd,
        delta=delta,
        status=sol.status,
        n_active=len(results),
        min_distance=float(min_d),
        qp_time=qp_time,
        qp_iterations=sol.iterations,
        manipulability=m,
    )
