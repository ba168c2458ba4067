"""Deterministic kinematic trial simulation at a fixed control rate.

A trial repeatedly solves the reactive QP, integrates the commanded
velocities, and checks ground-truth clearance against the primitive scene
until the end effector reaches the target pose, a collision occurs, the QP
fails, or the step budget runs out.  Everything is a pure function of the
inputs, so reruns produce identical trajectories; wall-clock measurements
are kept in a separate timing structure that deterministic serialisation
omits.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .controller import ControllerConfig, control_step
from .distance import GT_SDF
from .kinematics import DEFAULT_HOME, RobotModel, RobotState, forward_kinematics, sphere_world_positions
from .primitives import PrimitiveScene, sdf_batch
from .qp import OPTIMAL
from .scene import SplatScene
from .transforms import rotation_error, rotmat_to_quat, wrap_angle

SUCCESS = "success"
COLLISION = "collision"
TIMEOUT = "timeout"
QP_FAILURE = "qp_failure"

DEFAULT_DT = 0.05  # 20 Hz
DEFAULT_MAX_STEPS = 1200  # 60 s


def integrate(model: RobotModel, state: RobotState, qd: np.ndarray, dt: float) -> RobotState:
    """First-order step: body-frame forward velocity, then arm joints with clamping."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    qd = np.asarray(qd, dtype=float)
    x, y, theta = state.base
    x += qd[0] * dt * np.cos(theta)
    y += qd[0] * dt * np.sin(theta)
    theta = wrap_angle(theta + qd[1] * dt)
    q = np.clip(state.q + qd[2:] * dt, model.q_lower, model.q_upper)
    return RobotState(np.array([x, y, theta]), q)


def check_collision(
    scene: PrimitiveScene,
    model: RobotModel,
    state: RobotState,
    spheres=None,
) -> tuple[bool, float]:
    """Ground-truth clearance: min over spheres of (SDF at centre - radius)."""
    positions, radii, _ = sphere_world_positions(model, state, spheres)
    d, _ = sdf_batch(scene, positions)
    clearance = float((d - radii).min())
    return clearance < 0.0, clearance


@dataclass
class TrialResult:
    status: str
    steps: int
    dt: float
    backend: str
    times: np.ndarray  # (steps+1,)
    states: np.ndarray  # (steps+1, 3+n_arm)
    ee_positions: np.ndarray  # (steps+1, 3)
    ee_quats: np.ndarray  # (steps+1, 4)
    clearances: np.ndarray  # (steps+1,) ground-truth min clearance
    qds: np.ndarray  # (steps, n_dof)
    n_active: np.ndarray  # (steps,)
    min_distances: np.ndarray  # (steps,) backend-reported min distance
    final_translation_error: float
    final_rotation_error: float
    qp_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    @property
    def min_clearance(self) -> float:
        return float(self.clearances.min()) if self.clearances.size else np.inf

    @property
    def mean_clearance(self) -> float:
        return float(self.clearances.mean()) if self.clearances.size else np.inf

    def path_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.ee_positions, axis=0), axis=1).sum())

    def mean_abs_ee_acceleration(self) -> float:
        if self.ee_positions.shape[0] < 3:
            return 0.0
        acc = np.diff(self.ee_positions, 2, axis=0) / self.dt**2
        return float(np.linalg.norm(acc, axis=1).mean())

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        """JSON-ready representation; timing is excluded unless asked for."""
        out: dict[str, Any] = {
            "schema": 1,
            "status": self.status,
            "steps": self.steps,
            "dt": self.dt,
            "backend": self.backend,
            "final_translation_error": self.final_translation_error,
            "final_rotation_error": self.final_rotation_error,
            "min_clearance": self.min_clearance,
            "trajectory": {
                "times": self.times.tolist(),
                "states": self.states.tolist(),
                "ee_positions": self.ee_positions.tolist(),
                "ee_quats": self.ee_quats.tolist(),
                "clearances": self.clearances.tolist(),
                "qd": self.qds.tolist(),
                "n_active": self.n_active.tolist(),
                "min_distances": self.min_distances.tolist(),
            },
        }
        if include_timing:
            out["timing"] = self.timing_dict()
        return out

    def timing_dict(self) -> dict[str, Any]:
        return {
            "qp_times": self.qp_times.tolist(),
            "step_times": self.step_times.tolist(),
            "qp_time_mean": float(self.qp_times.mean()) if self.qp_times.size else 0.0,
            "control_rate_hz": float(1.0 / self.step_times.mean()) if self.step_times.size else 0.0,
        }

    def save(self, path: str | Path, include_timing: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_timing), sort_keys=True))

    def write_log(self, path: str | Path) -> None:
        """Per-step JSON-lines log (deterministic fields only)."""
        with open(path, "w") as f:
            for k in range(self.times.shape[0]):
                rec = {
                    "t": self.times[k],
                    "state": self.states[k].tolist(),
                    "ee_position": self.ee_positions[k].tolist(),
                    "ee_quat": self.ee_quats[k].tolist(),
                    "clearance": self.clearances[k],
                }
                if k > 0:
                    rec["qd"] = self.qds[k - 1].tolist()
                    rec["n_active"] = int(self.n_active[k - 1])
                    rec["min_distance"] = self.min_distances[k - 1]
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def _pose_errors(T_ee: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    err_t = float(np.linalg.norm(target[:3, 3] - T_ee[:3, 3]))
    err_r = float(np.linalg.norm(rotation_error(T_ee[:3, :3], target[:3, :3])))
    return err_t, err_r


def start_state_for(scene: PrimitiveScene, model: RobotModel) -> RobotState:
    """Initial state: generator-recorded base pose (or origin) with the home arm."""
    base = scene.start_base_pose if scene.start_base_pose is not None else np.zeros(3)
    home = DEFAULT_HOME[: model.n_arm] if model.n_arm <= DEFAULT_HOME.size else np.zeros(model.n_arm)
    return RobotState(np.asarray(base, dtype=float).copy(), np.array(home))


def run_trial(
    splat_scene: Optional[SplatScene],
    prim_scene: PrimitiveScene,
    target: np.ndarray,
    model: RobotModel,
    backend: str,
    config: ControllerConfig,
    dt: float = DEFAULT_DT,
    max_steps: int = DEFAULT_MAX_STEPS,
    start: Optional[RobotState] = None,
) -> TrialResult:
    """Simulate one reaching trial; never raises, errors become status values."""
    state = start.copy() if start is not None else start_state_for(prim_scene, model)
    control_scene = prim_scene if backend == GT_SDF else splat_scene

    times = [0.0]
    states = [np.concatenate([state.base, state.q])]
    _, T_ee = forward_kinematics(model, state)
    ee_pos = [T_ee[:3, 3].copy()]
    ee_quat = [rotmat_to_quat(T_ee[:3, :3])]
    _, clearance = check_collision(prim_scene, model, state)
    clearances = [clearance]
    qds: list[np.ndarray] = []
    actives: list[int] = []
    min_ds: list[float] = []
    qp_times: list[float] = []
    step_times: list[float] = []

    status = TIMEOUT
    err_t, err_r = _pose_errors(T_ee, target)
    if clearance < 0.0:
        status = COLLISION
    else:
        for _step in range(max_steps):
            t0 = time.perf_counter()
            try:
                out = control_step(model, state, target, control_scene, backend, config)
            except Exception:
                status = QP_FAILURE
                break
            state = integrate(model, state, out.qd, dt)
            step_times.append(time.perf_counter() - t0)

            _, T_ee = forward_kinematics(model, state)
            _, clearance = check_collision(prim_scene, model, state)
            times.append((len(qds) + 1) * dt)
            states.append(np.concatenate([state.base, state.q]))
            ee_pos.append(T_ee[:3, 3].copy())
            ee_quat.append(rotmat_to_quat(T_ee[:3, :3]))
            clearances.append(clearance)
            qds.append(out.qd.copy())
            actives.append(out.n_active)
            min_ds.append(out.min_distance)
            qp_times.append(out.qp_time)

            err_t, err_r = _pose_errors(T_ee, target)
            if out.status != OPTIMAL:
                status = QP_FAILURE
                break
            if clearance < 0.0:
                status = COLLISION
                break
            if err_t < config.tol_t and err_r < config.tol_r:
                status = SUCCESS
                break

    return TrialResult(
        status=status,
        steps=len(qds),
        dt=dt,
        backend=backend,
        times=np.array(times),
        states=np.array(states),
        ee_positions=np.array(ee_pos),
        ee_quats=np.array(ee_quat),
        clearances=np.array(clearances),
        qds=np.array(qds) if qds else np.zeros((0, model.n_dof)),
        n_active=np.array(actives, dtype=int),
        min_distances=np.array(min_ds),
        final_translation_error=err_t,
        final_rotation_error=err_r,
        qp_times=np.array(qp_times),
        step_times=np.array(step_times),
    )
