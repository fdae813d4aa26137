"""On-disk tensor container, RGB-D scene conventions, and point clouds.

The FOT1 container holds one n-dimensional array per file:

    magic "FOT1" | dtype code u8 | rank u32 | dims u32 each | payload LE

Dtype codes: 0 = f32, 1 = u16, 2 = u8, 3 = i32.  Payload is row-major,
little-endian, and round-trips bit-exactly.

Scene directories follow the ScanNet-style layout (documented in the
README): per-frame ``color/<id>.png`` (RGB), ``depth/<id>.png`` (16-bit,
millimeters, 0 = invalid), ``pose/<id>.txt`` (4x4 camera-to-world,
row-major), ``intrinsics/<id>.txt`` (fx fy cx cy, tied to the depth
resolution), plus a ``cloud.ply`` point cloud in world meters.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError

MAGIC = b"FOT1"

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<u2"): 1,
    np.dtype("u1"): 2,
    np.dtype("<i4"): 3,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}

_MAX_RANK = 16
_MAX_ELEMENTS = 1 << 40


def write_tensor(path, arr: np.ndarray) -> None:
    """Write ``arr`` (f32/u16/u8/i32, rank >= 1) as a FOT1 file."""
    if np.ndim(arr) == 0:
        raise ValueError("rank-0 tensors are not representable")
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype} (want f32/u16/u8/i32)")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"all dims must be >= 1, got shape {arr.shape}")
    header = MAGIC + struct.pack("<BI", _DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.astype(dt, copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a FOT1 file; raises FormatError on any malformed container."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read tensor {path}: {e}") from e
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 9:
        raise FormatError(f"{path}: truncated header")
    code, rank = struct.unpack_from("<BI", blob, 4)
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= rank <= _MAX_RANK:
        raise FormatError(f"{path}: bad rank {rank}")
    if len(blob) < 9 + 4 * rank:
        raise FormatError(f"{path}: truncated dims")
    shape = struct.unpack_from(f"<{rank}I", blob, 9)
    if any(d < 1 for d in shape):
        raise FormatError(f"{path}: zero-sized dim in {shape}")
    n = 1
    for d in shape:
        n *= d
        if n > _MAX_ELEMENTS:
            raise FormatError(f"{path}: dim overflow {shape}")
    dt = _CODE_DTYPES[code]
    payload = blob[9 + 4 * rank:]
    if len(payload) != n * dt.itemsize:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {n * dt.itemsize}"
        )
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class Frame:
    """One RGB-D view: image, depth map, camera-to-world pose, intrinsics."""

    frame_id: str
    image: np.ndarray      # (H, W, 3) u8
    depth: np.ndarray      # (Hd, Wd) u16 millimeters, 0 = invalid
    pose: np.ndarray       # (4, 4) f32 camera-to-world
    intrinsics: tuple[float, float, float, float]  # fx, fy, cx, cy (depth grid)

    def depth_meters(self) -> np.ndarray:
        return depth_to_meters(self.depth)


def depth_to_meters(depth: np.ndarray) -> np.ndarray:
    """Millimeters (u16) to meters (f32); exact division for values < 2^24."""
    return depth.astype(np.float32) / np.float32(1000.0)


def validate_pose(pose: np.ndarray, tol: float = 1e-3) -> None:
    if pose.shape != (4, 4):
        raise DataError(f"pose must be 4x4, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise DataError("pose contains non-finite values")
    if not np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0], atol=1e-5):
        raise DataError(f"pose bottom row is {pose[3]}, expected (0,0,0,1)")
    r = pose[:3, :3].astype(np.float64)
    dev = np.linalg.norm(r @ r.T - np.eye(3))
    if dev > tol:
        raise DataError(f"rotation block not orthonormal (Frobenius dev {dev:.3g})")


def _read_image(path: Path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"))
    return img.astype(np.uint8)


def _read_depth(path: Path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("I;16", "I", "I;16B"):
        raise DataError(f"{path}: depth PNG must be 16-bit single channel, got mode {img.mode}")
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.min() < 0 or arr.max() > 0xFFFF:
        raise DataError(f"{path}: depth values out of u16 range")
    return arr.astype(np.uint16)


def load_frame(scene_dir, frame_id: str) -> Frame:
    scene = Path(scene_dir)
    paths = {
        "color": scene / "color" / f"{frame_id}.png",
        "depth": scene / "depth" / f"{frame_id}.png",
        "pose": scene / "pose" / f"{frame_id}.txt",
        "intrinsics": scene / "intrinsics" / f"{frame_id}.txt",
    }
    for kind, p in paths.items():
        if not p.exists():
            raise DataError(f"frame {frame_id}: missing {kind} file {p}")
    image = _read_image(paths["color"])
    depth = _read_depth(paths["depth"])
    pose = np.loadtxt(paths["pose"], dtype=np.float64)
    validate_pose(pose)
    vals = [float(tok) for tok in paths["intrinsics"].read_text().split()]
    if len(vals) != 4:
        raise DataError(f"frame {frame_id}: intrinsics must be 'fx fy cx cy'")
    fx, fy, cx, cy = vals
    if fx <= 0 or fy <= 0:
        raise DataError(f"frame {frame_id}: fx, fy must be positive")
    return Frame(frame_id, image, depth, pose.astype(np.float32), (fx, fy, cx, cy))


def list_frames(scene_dir) -> list[str]:
    """Sorted frame ids with all four per-frame files present."""
    scene = Path(scene_dir)
    color = scene / "color"
    if not color.is_dir():
        raise DataError(f"{scene}: no color/ directory")
    ids = sorted(p.stem for p in color.glob("*.png"))
    if not ids:
        raise DataError(f"{scene}: no frames found")
    for fid in ids:
        for sub, ext in (("depth", ".png"), ("pose", ".txt"), ("intrinsics", ".txt")):
            if not (scene / sub / f"{fid}{ext}").exists():
                raise DataError(f"frame {fid}: missing {sub} file")
    return ids


def subsample_frames(frame_ids: list[str], stride: int) -> list[str]:
    """Keep ids at indices 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return list(frame_ids[::stride])


# ---------------------------------------------------------------------------
# point clouds (PLY)


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray            # (N, 3) f32 world meters
    colors: np.ndarray | None = None  # (N, 3) u8

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or len(self.positions) < 1:
            raise DataError(f"positions must be (N>=1, 3), got {self.positions.shape}")
        if not np.all(np.isfinite(self.positions)):
            raise DataError("positions contain non-finite values")


_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "ushort": "<u2", "uint16": "<u2", "short": "<i2", "int16": "<i2",
    "uint": "<u4", "uint32": "<u4", "int": "<i4", "int32": "<i4",
}


def read_ply(path) -> PointCloud:
    """Read vertex positions (and colors if present) from ascii or binary-LE PLY."""
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header")
    if not blob.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    end = blob.index(b"\n", end) + 1
    header = blob[:end].decode("ascii", "replace").splitlines()
    fmt = None
    n_vertex = 0
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
            elif props:
                break  # vertices come first; later elements (faces) are ignored
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise FormatError(f"{path}: list property in vertex element")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    names = [n for n, _ in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise FormatError(f"{path}: vertex element lacks '{need}'")
    if fmt == "ascii":
        rows = []
        for line in blob[end:].decode("ascii").splitlines():
            if line.strip():
                rows.append(line.split())
            if len(rows) == n_vertex:
                break
        if len(rows) != n_vertex:
            raise FormatError(f"{path}: expected {n_vertex} vertices, got {len(rows)}")
        data = {n: np.array([r[i] for r in rows], dtype=dt) for i, (n, dt) in enumerate(props)}
    else:
        dt = np.dtype([(n, t) for n, t in props])
        if len(blob) - end < n_vertex * dt.itemsize:
            raise FormatError(f"{path}: truncated vertex payload")
        rec = np.frombuffer(blob, dtype=dt, count=n_vertex, offset=end)
        data = {n: rec[n] for n, _ in props}
    pos = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float32)
    colors = None
    if all(c in data for c in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.uint8)
    return PointCloud(pos, colors)


def write_ply(path, cloud: PointCloud) -> None:
    """Write a binary little-endian PLY with positions and optional colors."""
    n = len(cloud.positions)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype(np.float32)
    if cloud.colors is not None:
        rec["red"], rec["green"], rec["blue"] = cloud.colors.T
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [
        f"property {'float' if dt == '<f4' else 'uchar'} {name}" for name, dt in fields
    ]
    header += ["end_header", ""]
    with open(path, "wb") as f:
        f.write("\n".join(header).encode("ascii"))
        f.write(rec.tobytes())


def load_point_cloud(scene_dir) -> PointCloud:
    p = Path(scene_dir) / "cloud.ply"
    if not p.exists():
        raise DataError(f"{scene_dir}: missing cloud.ply")
    return read_ply(p)
