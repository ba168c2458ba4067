"""PLY persistence for splat scenes (binary little-endian, de-facto layout).

The on-disk layout follows the common splat-export convention: per-vertex
float32 fields x, y, z, scale_0..2, rot_0..3, opacity, where opacity is
stored as a logit and scales as logs (`standard` activation).  `raw` reads
and writes the values verbatim.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .scene import SplatScene

REQUIRED_FIELDS = ("x", "y", "z", "scale_0", "scale_1", "scale_2",
                   "rot_0", "rot_1", "rot_2", "rot_3", "opacity")

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "ushort": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-7, 1.0 - 1e-7)
    return np.log(p / (1.0 - p))


def _parse_header(f: io.BufferedReader):
    magic = f.readline().strip()
    if magic != b"ply":
        raise ValueError("not a PLY file")
    fmt = None
    n_vertex = None
    props = []
    in_vertex = False
    while True:
        line = f.readline()
        if not line:
            raise ValueError("unterminated PLY header")
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                n_vertex = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise ValueError("list properties are not supported for splat vertices")
            if tokens[1] not in _PLY_TYPES:
                raise ValueError(f"unsupported PLY property type {tokens[1]!r}")
            props.append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise ValueError(f"unsupported PLY format {fmt!r} (binary_little_endian required)")
    if n_vertex is None:
        raise ValueError("PLY file has no vertex element")
    return n_vertex, props


def load_scene(path, activation: str = "standard") -> SplatScene:
    """Load a splat scene from a binary little-endian PLY file.

    activation="standard" applies sigmoid to stored opacity and exp to the
    stored scales; "raw" takes the stored values verbatim.
    """
    if activation not in ("standard", "raw"):
        raise ValueError(f"unknown activation {activation!r}")
    path = Path(path)
    with open(path, "rb") as f:
        n_vertex, props = _parse_header(f)
        names = [p[0] for p in props]
        for field in REQUIRED_FIELDS:
            if field not in names:
                raise ValueError(f"PLY file missing required field {field!r}")
        dtype = np.dtype(props)
        data = np.frombuffer(f.read(dtype.itemsize * n_vertex), dtype=dtype, count=n_vertex)
    if n_vertex == 0:
        raise ValueError("empty splat scene")
    means = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    scales = np.stack([data[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64)
    quats = np.stack([data[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
    op = data["opacity"].astype(np.float64)
    if not all(np.all(np.isfinite(a)) for a in (means, scales, quats, op)):
        raise ValueError("non-finite values in PLY data")
    if activation == "standard":
        op = _sigmoid(op)
        scales = np.exp(scales)
    return SplatScene(means, scales, quats, op)


def write_scene(path, scene: SplatScene, activation: str = "standard") -> None:
    """Write a scene as binary little-endian PLY (inverse of load_scene)."""
    if activation not in ("standard", "raw"):
        raise ValueError(f"unknown activation {activation!r}")
    scales = scene.scales
    op = scene.opacities
    if activation == "standard":
        scales = np.log(np.maximum(scales, 1e-12))
        op = _logit(op)
    dtype = np.dtype([(name, "<f4") for name in REQUIRED_FIELDS])
    rows = np.empty(scene.n, dtype=dtype)
    rows["x"], rows["y"], rows["z"] = scene.means.T.astype(np.float32)
    for i in range(3):
        rows[f"scale_{i}"] = scales[:, i].astype(np.float32)
    for i in range(4):
        rows[f"rot_{i}"] = scene.quats[:, i].astype(np.float32)
    rows["opacity"] = op.astype(np.float32)
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {scene.n}",
    ]
    header += [f"property float {name}" for name in REQUIRED_FIELDS]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rows.tobytes())


def write_pfm(path, image: np.ndarray) -> None:
    """Write a single-channel float32 PFM (little-endian) for depth dumps."""
    img = np.asarray(image, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{img.shape[1]} {img.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale = little-endian
        f.write(np.flipud(img).tobytes())
