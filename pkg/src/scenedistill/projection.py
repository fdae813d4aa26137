"""Point-to-pixel projection, depth-consistency filtering, and multi-view
averaging of pixel features into per-point target features.

A point contributes from a view iff it lands inside the depth map, the
sensor depth there is valid (nonzero), and the projected depth matches the
sensor depth within tau.  Feature lookups rescale (u, v) from the depth
grid to the feature-map (color) resolution with center-aligned nearest
pixel.  Views are accumulated in frame-id order with an f64 accumulator,
so the result is independent of the order views are supplied in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensorio import Frame, PointCloud

DEFAULT_TAU = 0.10
EPS_Z = 1e-6


@dataclass
class TargetFeatures:
    """Per-point averages of depth-consistent multi-view pixel features."""

    features: np.ndarray    # (Np, C) f32; zero rows where invalid
    view_count: np.ndarray  # (Np,) u32
    valid_mask: np.ndarray  # (Np,) bool, == view_count > 0


def invert_pose(pose: np.ndarray) -> np.ndarray:
    """World-to-camera transform from a camera-to-world pose."""
    p = np.asarray(pose, dtype=np.float64)
    try:
        inv = np.linalg.inv(p)
    except np.linalg.LinAlgError as e:
        raise DataError(f"singular pose: {e}") from e
    if not np.all(np.isfinite(inv)):
        raise DataError("singular pose (non-finite inverse)")
    return inv


def project_points(points: np.ndarray, pose: np.ndarray, intrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points into a camera.

    Returns (uv (N, 2) f64, z (N,) f64, in_front (N,) bool); uv rows are
    meaningful only where in_front.
    """
    fx, fy, cx, cy = intrinsics
    w2c = invert_pose(pose)
    pts = np.asarray(points, dtype=np.float64)
    cam = pts @ w2c[:3, :3].T + w2c[:3, 3]
    z = cam[:, 2]
    in_front = z > EPS_Z
    uv = np.empty((len(pts), 2), dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        uv[:, 0] = fx * cam[:, 0] / z + cx
        uv[:, 1] = fy * cam[:, 1] / z + cy
    return uv, z, in_front


def project_point(p_world, pose, intrinsics) -> tuple[float, float, float] | None:
    """Single-point projection; None if the point is behind the camera."""
    uv, z, front = project_points(np.asarray(p_world, dtype=np.float64)[None, :], pose, intrinsics)
    if not front[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0])


def unproject_point(u: float, v: float, z: float, pose, intrinsics) -> np.ndarray:
    fx, fy, cx, cy = intrinsics
    cam = np.array([(u - cx) * z / fx, (v - cy) * z / fy, z, 1.0])
    return (np.asarray(pose, dtype=np.float64) @ cam)[:3]


def depth_filter(z: float, u: float, v: float, depth_m: np.ndarray, tau: float = DEFAULT_TAU) -> bool:
    """True iff (u, v) rounds inside the depth map, the sensor depth there is
    valid, and |z - depth| <= tau."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    h, w = depth_m.shape
    ui = int(np.floor(u + 0.5))
    vi = int(np.floor(v + 0.5))
    if not (0 <= ui < w and 0 <= vi < h):
        return False
    d = float(depth_m[vi, ui])
    return d > 0.0 and abs(z - d) <= tau


def view_visibility(points: np.ndarray, frame: Frame, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-view visibility: (valid mask, rounded (vi, ui) ints)."""
    uv, z, front = project_points(points, frame.pose, frame.intrinsics)
    depth_m = frame.depth_meters()
    h, w = depth_m.shape
    u = np.where(front, uv[:, 0], -1.0)  # keep non-finite values out of the cast
    v = np.where(front, uv[:, 1], -1.0)
    ui = np.floor(u + 0.5).astype(np.int64)
    vi = np.floor(v + 0.5).astype(np.int64)
    inb = front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    ui_c = np.clip(ui, 0, w - 1)
    vi_c = np.clip(vi, 0, h - 1)
    d = depth_m[vi_c, ui_c].astype(np.float64)
    ok = inb & (d > 0.0) & (np.abs(z - d) <= tau)
    return ok, np.stack([vi_c, ui_c], axis=1)


def fuse_multiview(cloud: PointCloud, views, tau: float = DEFAULT_TAU) -> TargetFeatures:
    """Average depth-consistent pixel features over all views per point.

    views: list of (Frame, feature map (Hc, Wc, C) f32 at color resolution).
    Points never passing the filter are masked out with zero rows.
    """
    if not views:
        raise ValueError("no views supplied")
    channels = {fm.shape[2] for _, fm in views}
    if len(channels) != 1:
        raise ValueError(f"feature maps disagree on channels: {sorted(channels)}")
    c = channels.pop()
    pts = cloud.positions.astype(np.float64)
    n = len(pts)
    total = np.zeros((n, c), dtype=np.float64)
    count = np.zeros(n, dtype=np.uint32)
    for frame, fm in sorted(views, key=lambda v: v[0].frame_id):
        ok, viui = view_visibility(pts, frame, tau)
        if not ok.any():
            continue
        hd, wd = frame.depth.shape
        hc, wc = fm.shape[:2]
        vi, ui = viui[ok, 0], viui[ok, 1]
        if (hc, wc) != (hd, wd):
            # center-aligned rescale from the depth grid to the color grid
            uc = np.floor((ui + 0.5) * (wc / wd) - 0.5 + 0.5).astype(np.int64)
            vc = np.floor((vi + 0.5) * (hc / hd) - 0.5 + 0.5).astype(np.int64)
            ui = np.clip(uc, 0, wc - 1)
            vi = np.clip(vc, 0, hc - 1)
        total[ok] += fm[vi, ui].astype(np.float64)
        count[ok] += 1
    valid = count > 0
    features = np.zeros((n, c), dtype=np.float32)
    features[valid] = (total[valid] / count[valid, None]).astype(np.float32)
    return TargetFeatures(features, count, valid)
