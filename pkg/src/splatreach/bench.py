"""Benchmark harness: scene batches, trial matrices, and summary tables.

A suite spec describes a grid of (scene kind x seed) x backend x active-cost
trials.  Running it produces three artefacts in the output directory:

- ``results.json``: one summary record per trial, sorted by scene id.
- ``metrics.json`` / ``metrics.csv``: aggregated metrics per configuration.
- ``timing.json``: wall-clock measurements (QP solve times, control rate).

Everything except ``timing.json`` is a pure function of the suite spec, so
reruns with identical inputs are byte-identical; wall-clock numbers are kept
out of the deterministic artefacts on purpose.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .controller import ControllerConfig
from .distance import BACKENDS
from .kinematics import RobotModel, default_robot
from .sim import COLLISION, DEFAULT_DT, DEFAULT_MAX_STEPS, QP_FAILURE, TrialResult, run_trial
from .synth import GeneratorSpec, generate_synthetic_scene

SCHEMA_VERSION = 1


@dataclass
class MetricsRecord:
    """Aggregate metrics for one benchmark configuration.

    ``avg_distance``, ``gracefulness``, and ``path_length`` are the starred
    metrics: they average only over the common-success trial set handed to
    :func:`compute_metrics` and are ``None`` (reported as n/a) when that set
    is empty.  QP time and control rate come from wall-clock measurement and
    are serialised separately from the deterministic fields.
    """

    n_trials: int
    success_rate: float
    collision_rate: float
    avg_distance: Optional[float]  # m, mean over steps of min ground-truth clearance
    gracefulness: Optional[float]  # m/s^2, mean |ee acceleration|
    path_length: Optional[float]  # m, mean per-trial end-effector path
    mean_inequalities: float  # mean active constraint rows per step
    qp_time_mean_ms: float
    qp_time_std_ms: float
    control_rate_hz: float

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "n_trials": self.n_trials,
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "avg_distance": self.avg_distance,
            "gracefulness": self.gracefulness,
            "path_length": self.path_length,
            "mean_inequalities": self.mean_inequalities,
        }
        if include_timing:
            out.update(self.timing_dict())
        return out

    def timing_dict(self) -> dict[str, float]:
        return {
            "qp_time_mean_ms": self.qp_time_mean_ms,
            "qp_time_std_ms": self.qp_time_std_ms,
            "control_rate_hz": self.control_rate_hz,
        }


def compute_metrics(trials: Sequence[TrialResult], common: Optional[Sequence[int]] = None) -> MetricsRecord:
    """Aggregate one configuration's trials into a :class:`MetricsRecord`.

    ``common`` lists the trial indices forming the common-success set across
    the configurations being compared; it defaults to this configuration's
    own successes.  Starred metrics average per-trial values over that set.
    """
    if not trials:
        raise ValueError("compute_metrics needs at least one trial")
    n = len(trials)
    if common is None:
        common = [k for k, t in enumerate(trials) if t.success]
    starred = [trials[k] for k in common]

    avg_distance = gracefulness = path_length = None
    if starred:
        avg_distance = float(np.mean([t.mean_clearance for t in starred]))
        gracefulness = float(np.mean([t.mean_abs_ee_acceleration() for t in starred]))
        path_length = float(np.mean([t.path_length() for t in starred]))

    qp_times = np.concatenate([t.qp_times for t in trials if t.qp_times.size] or [np.zeros(0)])
    step_times = np.concatenate([t.step_times for t in trials if t.step_times.size] or [np.zeros(0)])
    n_active = np.concatenate([t.n_active for t in trials if t.n_active.size] or [np.zeros(0)])
    return MetricsRecord(
        n_trials=n,
        success_rate=sum(t.success for t in trials) / n,
        collision_rate=sum(t.status == COLLISION for t in trials) / n,
        avg_distance=avg_distance,
        gracefulness=gracefulness,
        path_length=path_length,
        mean_inequalities=float(n_active.mean()) if n_active.size else 0.0,
        qp_time_mean_ms=float(qp_times.mean() * 1e3) if qp_times.size else 0.0,
        qp_time_std_ms=float(qp_times.std() * 1e3) if qp_times.size else 0.0,
        control_rate_hz=float(1.0 / step_times.mean()) if step_times.size else 0.0,
    )


@dataclass
class SuiteSpec:
    """Declarative description of one benchmark run."""

    kinds: list[str] = field(default_factory=lambda: ["table", "bookshelf"])
    count: int = 50  # scenes per kind
    seed: int = 0  # scene seeds are seed..seed+count-1
    backends: list[str] = field(default_factory=lambda: list(BACKENDS))
    active_cost: list[bool] = field(default_factory=lambda: [True, False])
    clutter_count: int = 6
    spacing: float = 0.02
    walls: bool = False
    dt: float = DEFAULT_DT
    max_steps: int = DEFAULT_MAX_STEPS
    controller: dict[str, Any] = field(default_factory=dict)  # ControllerConfig overrides
    save_trajectories: bool = False

    def __post_init__(self) -> None:
        if self.count <= 0:
            raise ValueError("count must be positive")
        for b in self.backends:
            if b not in BACKENDS:
                raise ValueError(f"unknown backend {b!r}; expected one of {BACKENDS}")
        if not self.backends or not self.active_cost or not self.kinds:
            raise ValueError("backends, active_cost, and kinds must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SuiteSpec":
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def base_config(self) -> ControllerConfig:
        return ControllerConfig(**self.controller)


def _scene_id(kind: str, seed: int) -> str:
    return f"{kind}-{seed:05d}"


def _config_key(kind: str, backend: str, active: bool) -> str:
    return f"{kind}|{backend}|cost={'on' if active else 'off'}"


def _trial_summary(scene_id: str, kind: str, seed: int, backend: str, active: bool,
                   splat_count: int, result: TrialResult) -> dict[str, Any]:
    return {
        "scene_id": scene_id,
        "kind": kind,
        "seed": seed,
        "backend": backend,
        "active_cost": active,
        "splat_count": splat_count,
        "status": result.status,
        "steps": result.steps,
        "final_translation_error": result.final_translation_error,
        "final_rotation_error": result.final_rotation_error,
        "min_clearance": result.min_clearance,
        "mean_clearance": result.mean_clearance,
        "path_length": result.path_length(),
        "gracefulness": result.mean_abs_ee_acceleration(),
        "mean_n_active": float(result.n_active.mean()) if result.n_active.size else 0.0,
    }


def _failed_trial(backend: str, dt: float) -> TrialResult:
    """Placeholder result for a trial that crashed outside the control loop."""
    return TrialResult(
        status=QP_FAILURE, steps=0, dt=dt, backend=backend,
        times=np.zeros(1), states=np.zeros((1, 0)), ee_positions=np.zeros((1, 3)),
        ee_quats=np.zeros((1, 4)), clearances=np.zeros(1), qds=np.zeros((0, 0)),
        n_active=np.zeros(0, dtype=int), min_distances=np.zeros(0),
        final_translation_error=float("inf"), final_rotation_error=float("inf"),
    )


def run_benchmark(spec: SuiteSpec, out_dir: str | Path, model: Optional[RobotModel] = None,
                  verbose: bool = False) -> dict[str, MetricsRecord]:
    """Run the full trial matrix and write the benchmark artefacts.

    Returns the per-configuration metrics (keys ``kind|backend|cost=on/off``
    with ``kind`` also taking the synthetic value ``all``).  A trial that
    raises is recorded with qp_failure status and the run continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = default_robot()
    base_cfg = spec.base_config()
    configs = [(b, a) for b in spec.backends for a in spec.active_cost]

    trials: dict[tuple[str, str, bool], TrialResult] = {}
    rows: list[dict[str, Any]] = []
    for kind in spec.kinds:
        for i in range(spec.count):
            seed = spec.seed + i
            scene_id = _scene_id(kind, seed)
            gen = GeneratorSpec(kind=kind, seed=seed, clutter_count=spec.clutter_count,
                                spacing=spec.spacing, walls=spec.walls)
            prim_scene, splat_scene = generate_synthetic_scene(gen)
            for backend, active in configs:
                cfg = replace(base_cfg, active_collision_cost=active)
                try:
                    result = run_trial(splat_scene, prim_scene, prim_scene.target_pose,
                                       model, backend, cfg, dt=spec.dt, max_steps=spec.max_steps)
                except Exception:
                    result = _failed_trial(backend, spec.dt)
                trials[(scene_id, backend, active)] = result
                rows.append(_trial_summary(scene_id, kind, seed, backend, active,
                                           len(splat_scene), result))
                if spec.save_trajectories:
                    tdir = out / "trials"
                    tdir.mkdir(exist_ok=True)
                    tag = "on" if active else "off"
                    result.save(tdir / f"{scene_id}_{backend}_cost-{tag}.json")
                if verbose:
                    print(f"{scene_id} {backend} cost-{'on' if active else 'off'}: {result.status}")

    rows.sort(key=lambda r: (r["scene_id"], r["backend"], not r["active_cost"]))
    scene_ids = sorted({r["scene_id"] for r in rows})
    kinds_of = {sid: sid.rsplit("-", 1)[0] for sid in scene_ids}

    metrics: dict[str, MetricsRecord] = {}
    scopes = list(spec.kinds) + (["all"] if len(spec.kinds) > 1 else [])
    for scope in scopes:
        ids = [sid for sid in scene_ids if scope == "all" or kinds_of[sid] == scope]
        if not ids:
            continue
        # Common-success set: scenes every configuration solved.
        common = [k for k, sid in enumerate(ids)
                  if all(trials[(sid, b, a)].success for b, a in configs)]
        for backend, active in configs:
            batch = [trials[(sid, backend, active)] for sid in ids]
            metrics[_config_key(scope, backend, active)] = compute_metrics(batch, common)

    hash_ = spec.config_hash()
    _write_json(out / "results.json", {
        "schema": SCHEMA_VERSION,
        "config_hash": hash_,
        "suite": spec.to_dict(),
        "trials": rows,
    })
    _write_json(out / "metrics.json", {
        "schema": SCHEMA_VERSION,
        "config_hash": hash_,
        "metrics": {k: m.to_dict() for k, m in sorted(metrics.items())},
    })
    (out / "metrics.csv").write_bytes(metrics_csv(metrics).encode())
    _write_json(out / "timing.json", {
        "schema": SCHEMA_VERSION,
        "config_hash": hash_,
        "timing": {k: m.timing_dict() for k, m in sorted(metrics.items())},
    })
    return metrics


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


_CSV_COLUMNS = [
    "scene_kind", "backend", "active_cost", "n_trials", "success_rate",
    "collision_rate", "avg_distance_m", "gracefulness_m_s2", "path_length_m",
    "mean_inequalities",
]


def _cell(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def metrics_csv(metrics: dict[str, MetricsRecord]) -> str:
    """Render metrics as a CSV table, one row per configuration."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for key in sorted(metrics):
        kind, backend, cost = key.split("|")
        m = metrics[key]
        writer.writerow([
            kind, backend, cost.removeprefix("cost="), m.n_trials,
            _cell(m.success_rate), _cell(m.collision_rate), _cell(m.avg_distance),
            _cell(m.gracefulness), _cell(m.path_length), _cell(m.mean_inequalities),
        ])
    return buf.getvalue()


def metrics_markdown(metrics: dict[str, Any], timing: Optional[dict[str, Any]] = None) -> str:
    """Render a metrics mapping (record dicts) as a markdown table."""
    header = ["configuration", "success", "collisions", "avg dist (m)",
              "gracefulness (m/s^2)", "path (m)", "ineq rows"]
    if timing:
        header += ["qp (ms)", "rate (Hz)"]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    for key in sorted(metrics):
        m = metrics[key]
        row = [key, _cell(m["success_rate"]), _cell(m["collision_rate"]),
               _cell(m["avg_distance"]), _cell(m["gracefulness"]),
               _cell(m["path_length"]), _cell(m["mean_inequalities"])]
        if timing:
            t = timing.get(key, {})
            qp = t.get("qp_time_mean_ms")
            sd = t.get("qp_time_std_ms")
            row.append("n/a" if qp is None else f"{qp:.3f} +/- {sd:.3f}")
            row.append(_cell(t.get("control_rate_hz")))
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
