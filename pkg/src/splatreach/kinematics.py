"""Holistic kinematics: differential-drive base as two virtual joints plus a serial arm.

The generalised velocity vector is ``[dx, dtheta, qdot_arm]`` where ``dx`` is
forward translation along the base heading and ``dtheta`` is rotation about
the base origin.  Link index 0 is the base body; link ``k`` (1-based) is the
frame attached after arm joint ``k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .transforms import axis_angle, make_transform, rotz, wrap_angle

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

_MANIP_SINGULAR_TOL = 1e-9
_FD_STEP = 1e-6


@dataclass(frozen=True)
class Joint:
    name: str
    joint_type: str
    origin: np.ndarray  # fixed transform parent -> joint frame at q = 0
    axis: np.ndarray  # motion axis in the joint frame
    lower: float
    upper: float
    velocity: float

    def __post_init__(self) -> None:
        if self.joint_type not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper) and self.lower < self.upper):
            raise ValueError(f"joint {self.name!r}: limits must be finite with lower < upper")
        if self.velocity <= 0.0:
            raise ValueError(f"joint {self.name!r}: velocity limit must be positive")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(4, 4))
        ax = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(ax)
        if n == 0.0:
            raise ValueError(f"joint {self.name!r}: zero axis")
        object.__setattr__(self, "axis", ax / n)

    def motion(self, q: float) -> np.ndarray:
        if self.joint_type == REVOLUTE:
            return make_transform(axis_angle(self.axis, q))
        return make_transform(t=self.axis * q)


@dataclass(frozen=True)
class SphereSpec:
    link: int
    offset: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))


class SphereSet:
    """Immutable collection of collision spheres, grouped by link for speed."""

    def __init__(self, spheres: list[SphereSpec]):
        self._spheres = tuple(spheres)
        self.links = np.array([s.link for s in spheres], dtype=int)
        self.offsets = np.array([s.offset for s in spheres]).reshape(-1, 3)
        self.radii = np.array([s.radius for s in spheres], dtype=float)

    def __len__(self) -> int:
        return len(self._spheres)

    def __iter__(self):
        return iter(self._spheres)

    def __getitem__(self, i: int) -> SphereSpec:
        return self._spheres[i]


@dataclass
class RobotModel:
    base_mount: np.ndarray  # base frame -> arm root
    arm_joints: list[Joint]
    base_linear_velocity: float
    base_angular_velocity: float
    ee_offset: np.ndarray  # last joint frame -> end-effector frame
    spheres: SphereSet = field(default_factory=lambda: SphereSet([]))
    name: str = "robot"

    def __post_init__(self) -> None:
        self.base_mount = np.asarray(self.base_mount, dtype=float).reshape(4, 4)
        self.ee_offset = np.asarray(self.ee_offset, dtype=float).reshape(4, 4)
        if self.base_linear_velocity <= 0.0 or self.base_angular_velocity <= 0.0:
            raise ValueError("base velocity limits must be positive")
        for s in self.spheres:
            if not 0 <= s.link <= self.n_arm:
                raise ValueError(f"sphere link index {s.link} out of range")

    @property
    def n_arm(self) -> int:
        return len(self.arm_joints)

    @property
    def n_dof(self) -> int:
        return 2 + self.n_arm

    @property
    def q_lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.arm_joints])

    @property
    def q_upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.arm_joints])

    @property
    def velocity_limits(self) -> np.ndarray:
        """Box bound on [dx, dtheta, qdot_arm] (symmetric)."""
        return np.concatenate(
            [[self.base_linear_velocity, self.base_angular_velocity], [j.velocity for j in self.arm_joints]]
        )


@dataclass
class RobotState:
    base: np.ndarray  # (x, y, theta)
    q: np.ndarray

    def __post_init__(self) -> None:
        self.base = np.asarray(self.base, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)

    def copy(self) -> "RobotState":
        return RobotState(self.base.copy(), self.q.copy())


def base_pose(state: RobotState) -> np.ndarray:
    x, y, theta = state.base
    return make_transform(rotz(theta), [x, y, 0.0])


def forward_kinematics(model: RobotModel, state: RobotState) -> tuple[np.ndarray, np.ndarray]:
    """World poses of every link frame plus the end-effector pose.

    Returns ``(link_poses, T_ee)`` where ``link_poses[0]`` is the base body
    frame and ``link_poses[k]`` the frame after arm joint ``k``.
    """
    if state.q.shape[0] != model.n_arm:
        raise ValueError("state has wrong arm dimension")
    poses = np.empty((model.n_arm + 1, 4, 4))
    poses[0] = base_pose(state)
    T = poses[0] @ model.base_mount
    for k, joint in enumerate(model.arm_joints):
        T = T @ joint.origin @ joint.motion(state.q[k])
        poses[k + 1] = T
    return poses, T @ model.ee_offset


@dataclass(frozen=True)
class _KinCache:
    """Per-state quantities shared by all Jacobian evaluations."""

    link_poses: np.ndarray
    T_ee: np.ndarray
    axes: np.ndarray  # (n_arm, 3) joint axes in world frame
    origins: np.ndarray  # (n_arm, 3) joint frame origins
    heading: np.ndarray  # base forward direction (3,)
    base_origin: np.ndarray  # (3,)


def _kin_cache(model: RobotModel, state: RobotState) -> _KinCache:
    link_poses, T_ee = forward_kinematics(model, state)
    n = model.n_arm
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    for k, joint in enumerate(model.arm_joints):
        # Joint motion leaves its own axis invariant, so the post-motion frame
        # carries both the axis direction and the rotation origin.
        axes[k] = link_poses[k + 1, :3, :3] @ joint.axis
        origins[k] = link_poses[k + 1, :3, 3]
    theta = state.base[2]
    heading = np.array([np.cos(theta), np.sin(theta), 0.0])
    base_origin = np.array([state.base[0], state.base[1], 0.0])
    return _KinCache(link_poses, T_ee, axes, origins, heading, base_origin)


def _point_jacobian(model: RobotModel, cache: _KinCache, link_index: int, point_world: np.ndarray) -> np.ndarray:
    """Translational Jacobian (3 x (2 + link_index)) of a world point on a link."""
    k = 2 + link_index
    J = np.zeros((3, k))
    J[:, 0] = cache.heading
    rel = point_world - cache.base_origin
    J[0, 1] = -rel[1]
    J[1, 1] = rel[0]
    for i in range(link_index):
        joint = model.arm_joints[i]
        if joint.joint_type == REVOLUTE:
            J[:, 2 + i] = np.cross(cache.axes[i], point_world - cache.origins[i])
        else:
            J[:, 2 + i] = cache.axes[i]
    return J


def _ee_jacobian(model: RobotModel, cache: _KinCache) -> np.ndarray:
    """Full 6 x n_dof end-effector Jacobian (linear rows first)."""
    p = cache.T_ee[:3, 3]
    J = np.zeros((6, model.n_dof))
    J[:3, 0] = cache.heading
    rel = p - cache.base_origin
    J[0, 1] = -rel[1]
    J[1, 1] = rel[0]
    J[5, 1] = 1.0
    for i, joint in enumerate(model.arm_joints):
        if joint.joint_type == REVOLUTE:
            J[:3, 2 + i] = np.cross(cache.axes[i], p - cache.origins[i])
            J[3:, 2 + i] = cache.axes[i]
        else:
            J[:3, 2 + i] = cache.axes[i]
    return J


def jacobian(
    model: RobotModel,
    state: RobotState,
    link_index: int | None = None,
    local_point: np.ndarray | None = None,
) -> np.ndarray:
    """World-frame velocity Jacobian.

    With no link given, returns the full 6 x n_dof end-effector Jacobian.
    Given ``(link_index, local_point)``, returns the 3 x (2 + link_index)
    translational Jacobian of that body point; columns are the joints that
    can move it, callers zero-pad to n_dof.
    """
    cache = _kin_cache(model, state)
    if link_index is None:
        return _ee_jacobian(model, cache)
    if not 0 <= link_index <= model.n_arm:
        raise ValueError(f"link index {link_index} out of range")
    point = np.zeros(3) if local_point is None else np.asarray(local_point, dtype=float)
    T = cache.link_poses[link_index]
    return _point_jacobian(model, cache, link_index, T[:3, :3] @ point + T[:3, 3])


def sphere_world_positions(
    model: RobotModel,
    state: RobotState,
    spheres: SphereSet | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World sphere centres as arrays ``(positions (N,3), radii (N,), links (N,))``."""
    if spheres is None:
        spheres = model.spheres
    link_poses, _ = forward_kinematics(model, state)
    positions = np.empty((len(spheres), 3))
    for link in np.unique(spheres.links):
        mask = spheres.links == link
        T = link_poses[link]
        positions[mask] = spheres.offsets[mask] @ T[:3, :3].T + T[:3, 3]
    return positions, spheres.radii.copy(), spheres.links.copy()


def _arm_jacobian_local(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """6 x n_arm arm Jacobian at the end effector, arm-root frame, base ignored."""
    n = model.n_arm
    T = np.eye(4)
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    for k, joint in enumerate(model.arm_joints):
        T = T @ joint.origin @ joint.motion(q[k])
        axes[k] = T[:3, :3] @ joint.axis
        origins[k] = T[:3, 3]
    p = (T @ model.ee_offset)[:3, 3]
    J = np.zeros((6, n))
    for i, joint in enumerate(model.arm_joints):
        if joint.joint_type == REVOLUTE:
            J[:3, i] = np.cross(axes[i], p - origins[i])
            J[3:, i] = axes[i]
        else:
            J[:3, i] = axes[i]
    return J


def _manipulability(model: RobotModel, q: np.ndarray) -> float:
    J = _arm_jacobian_local(model, q)
    n = model.n_arm
    if n >= 6:
        gram = J @ J.T
    else:
        Jv = J[:3]
        gram = Jv @ Jv.T if n >= 3 else Jv.T @ Jv
    det = float(np.linalg.det(gram))
    return float(np.sqrt(max(det, 0.0)))


def manipulability_jacobian(model: RobotModel, state: RobotState) -> tuple[float, np.ndarray]:
    """Arm manipulability and its gradient over the generalised coordinates.

    The measure depends on the arm configuration only, so the two base
    columns of the gradient are zero.  Near-singular configurations clamp to
    ``(0, zeros)``.  The gradient is computed by central finite differences.
    """
    m = _manipulability(model, state.q)
    grad = np.zeros(model.n_dof)
    if m < _MANIP_SINGULAR_TOL:
        return 0.0, grad
    for i in range(model.n_arm):
        qp = state.q.copy()
        qm = state.q.copy()
        qp[i] += _FD_STEP
        qm[i] -= _FD_STEP
        grad[2 + i] = (_manipulability(model, qp) - _manipulability(model, qm)) / (2.0 * _FD_STEP)
    return m, grad


# --------------------------------------------------------------------------
# Serialization


def _model_to_dict(model: RobotModel) -> dict:
    return {
        "name": model.name,
        "base_mount": model.base_mount.tolist(),
        "ee_offset": model.ee_offset.tolist(),
        "base_velocity_limits": {
            "linear": model.base_linear_velocity,
            "angular": model.base_angular_velocity,
        },
        "joints": [
            {
                "name": j.name,
                "type": j.joint_type,
                "origin": j.origin.tolist(),
                "axis": j.axis.tolist(),
                "lower": j.lower,
                "upper": j.upper,
                "velocity": j.velocity,
            }
            for j in model.arm_joints
        ],
        "spheres": [
            {"link": int(s.link), "offset": s.offset.tolist(), "radius": s.radius} for s in model.spheres
        ],
    }


def _model_from_dict(data: dict) -> RobotModel:
    joints = [
        Joint(
            name=j["name"],
            joint_type=j["type"],
            origin=np.asarray(j["origin"]),
            axis=np.asarray(j["axis"]),
            lower=float(j["lower"]),
            upper=float(j["upper"]),
            velocity=float(j["velocity"]),
        )
        for j in data["joints"]
    ]
    spheres = SphereSet(
        [SphereSpec(int(s["link"]), np.asarray(s["offset"]), float(s["radius"])) for s in data.get("spheres", [])]
    )
    return RobotModel(
        base_mount=np.asarray(data["base_mount"]),
        arm_joints=joints,
        base_linear_velocity=float(data["base_velocity_limits"]["linear"]),
        base_angular_velocity=float(data["base_velocity_limits"]["angular"]),
        ee_offset=np.asarray(data["ee_offset"]),
        spheres=spheres,
        name=data.get("name", "robot"),
    )


def save_robot(path: str | Path, model: RobotModel) -> None:
    Path(path).write_text(json.dumps(_model_to_dict(model), indent=1, sort_keys=True))


def load_robot(path: str | Path) -> RobotModel:
    with open(path) as f:
        return _model_from_dict(json.load(f))


_DEFAULT_ROBOT_CACHE: RobotModel | None = None


def default_robot() -> RobotModel:
    """The shipped mobile manipulator: differential base + 7-DoF arm, 29 spheres."""
    global _DEFAULT_ROBOT_CACHE
    if _DEFAULT_ROBOT_CACHE is None:
        text = resources.files("splatreach").joinpath("assets/default_robot.json").read_text()
        _DEFAULT_ROBOT_CACHE = _model_from_dict(json.loads(text))
    return _DEFAULT_ROBOT_CACHE


def clamp_state(model: RobotModel, state: RobotState) -> RobotState:
    """Wrap the heading to (-pi, pi] and clamp arm joints to position limits."""
    base = state.base.copy()
    base[2] = wrap_angle(base[2])
    q = np.clip(state.q, model.q_lower, model.q_upper)
    return RobotState(base, q)


DEFAULT_HOME = np.array([0.0, -0.3, 0.0, -2.2, 0.0, 2.0, 0.785])
