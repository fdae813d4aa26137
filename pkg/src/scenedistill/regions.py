"""Multi-scale crop scheduling, patch-to-superpixel assignment, and fusion.

Crops slide at a fraction of their own size per scale, with a final window
clamped to the view edge so the union always covers the view.  Per-crop
feature maps are averaged back onto the view in a fixed (scale-major,
row-major) order, making the fused map bit-deterministic and invariant to
the order the crops are supplied in.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .superpixel import SuperpixelMap

log = logging.getLogger(__name__)

MIN_CROP_PX = 32


@dataclass(frozen=True)
class CropSpec:
    x0: int
    y0: int
    w: int
    h: int
    scale_level: int

    @property
    def rect(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.w, self.h)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _axis_positions(view: int, win: int, stride_frac: float) -> list[int]:
    if win >= view:
        return [0]
    step = max(1.0, win * stride_frac)  # sub-pixel strides cannot make progress
    xs = []
    i = 0
    while True:
        x = _round_half_up(i * step)
        if x + win >= view:
            break
        xs.append(x)
        i += 1
    last = view - win
    if not xs or xs[-1] != last:
        xs.append(last)
    return xs


def generate_crops(view_w: int, view_h: int, scales, stride_frac: float) -> list[CropSpec]:
    """Sliding windows per scale whose union covers the view, deduplicated."""
    if not scales:
        raise ValueError("need at least one scale")
    for s in scales:
        if not 0.0 < s <= 1.0:
            raise ValueError(f"scales must be in (0, 1], got {s}")
    if not 0.0 < stride_frac <= 1.0:
        raise ValueError(f"stride_frac must be in (0, 1], got {stride_frac}")
    crops: list[CropSpec] = []
    seen = set()
    for level, s in enumerate(scales):
        win_w = min(view_w, _round_half_up(s * view_w))
        win_h = min(view_h, _round_half_up(s * view_h))
        if min(win_w, win_h) < MIN_CROP_PX:
            log.warning("scale %g yields a %dx%d window (< %d px); skipped",
                        s, win_w, win_h, MIN_CROP_PX)
            continue
        for y in _axis_positions(view_h, win_h, stride_frac):
            for x in _axis_positions(view_w, win_w, stride_frac):
                rect = (x, y, win_w, win_h)
                if rect not in seen:
                    seen.add(rect)
                    crops.append(CropSpec(x, y, win_w, win_h, level))
    if not crops:
        raise ValueError("every scale was skipped; view too small")
    return crops


def crops_cover_view(crops, view_w: int, view_h: int) -> bool:
    count = np.zeros((view_h, view_w), dtype=np.uint32)
    for c in crops:
        count[c.y0:c.y0 + c.h, c.x0:c.x0 + c.w] += 1
    return bool((count > 0).all())


# ---------------------------------------------------------------------------
# patch assignment


@dataclass
class PatchAssignment:
    """Majority superpixel per ViT patch plus the per-segment token sets.

    A segment that wins no patch is mapped to the single patch containing
    its centroid, so every token set is nonempty.
    """

    patch_to_superpixel: np.ndarray   # (M,) i32
    patch_grid: int                   # g, with M = g*g
    token_sets: list[np.ndarray]      # per segment, sorted patch indices
    zero_patch_segments: list[int]


def _footprint_bounds(c: int, g: int, extent: int) -> tuple[int, int]:
    lo = min(int(c * extent / g), extent - 1)
    hi = max(lo + 1, min(int(math.ceil((c + 1) * extent / g)), extent))
    return lo, hi


def assign_patches(spmap: SuperpixelMap, patch_grid: int) -> PatchAssignment:
    """Assign each of the g*g patches its majority superpixel label
    (ties to the smallest label) over the footprint the patch maps back to
    in the native crop."""
    h, w = spmap.labels.shape
    g = patch_grid
    n = spmap.n_segments
    assignment = np.empty(g * g, dtype=np.int32)
    for r in range(g):
        y0, y1 = _footprint_bounds(r, g, h)
        for c in range(g):
            x0, x1 = _footprint_bounds(c, g, w)
            hist = np.bincount(spmap.labels[y0:y1, x0:x1].ravel(), minlength=n)
            assignment[r * g + c] = int(np.argmax(hist))
    token_sets = [np.flatnonzero(assignment == j).astype(np.int32) for j in range(n)]
    zero_patch = [j for j in range(n) if len(token_sets[j]) == 0]
    for j in zero_patch:
        cx, cy = spmap.centroids[j]
        pc = min(int(cx * g / w), g - 1)
        pr = min(int(cy * g / h), g - 1)
        token_sets[j] = np.array([pr * g + pc], dtype=np.int32)
    return PatchAssignment(assignment, g, token_sets, zero_patch)


# ---------------------------------------------------------------------------
# fusion


class FusionAccumulator:
    """Running per-pixel sum and coverage count for crop fusion.

    Sums are kept in f64 so that averaging identical contributions
    reproduces the value exactly; the finalized mean is cast to f32.
    Crops must be added in (scale_level, y0, x0) order for bit-determinism
    (`stitch_and_fuse` sorts; incremental callers follow the generate_crops
    order, which is the same).
    """

    def __init__(self, view_w: int, view_h: int, channels: int):
        self.view_w = view_w
        self.view_h = view_h
        self.total = np.zeros((view_h, view_w, channels), dtype=np.float64)
        self.count = np.zeros((view_h, view_w), dtype=np.uint32)

    def add(self, spec: CropSpec, fm: np.ndarray) -> None:
        if fm.shape[:2] != (spec.h, spec.w):
            raise ValueError(
                f"crop map shape {fm.shape[:2]} does not match rect {(spec.h, spec.w)}"
            )
        if fm.shape[2] != self.total.shape[2]:
            raise ValueError(
                f"channel mismatch: crop has {fm.shape[2]}, accumulator {self.total.shape[2]}"
            )
        if (spec.x0 < 0 or spec.y0 < 0 or spec.x0 + spec.w > self.view_w
                or spec.y0 + spec.h > self.view_h):
            raise ValueError(f"crop rect {spec.rect} outside view "
                             f"{self.view_w}x{self.view_h}")
        self.total[spec.y0:spec.y0 + spec.h, spec.x0:spec.x0 + spec.w] += fm
        self.count[spec.y0:spec.y0 + spec.h, spec.x0:spec.x0 + spec.w] += 1

    def finalize(self) -> np.ndarray:
        if (self.count == 0).any():
            raise ValueError("crop union does not cover the view")
        return (self.total / self.count[:, :, None]).astype(np.float32)


def stitch_and_fuse(crop_maps, view_w: int, view_h: int) -> np.ndarray:
    """Average per-crop feature maps (each at its rect size) onto the view,
    independent of the order the crops are supplied in."""
    if not crop_maps:
        raise ValueError("no crop maps supplied")
    channels = {fm.shape[2] for _, fm in crop_maps}
    if len(channels) != 1:
        raise ValueError(f"channel mismatch across crops: {sorted(channels)}")
    acc = FusionAccumulator(view_w, view_h, channels.pop())
    for spec, fm in sorted(crop_maps, key=lambda cm: (cm[0].scale_level, cm[0].y0, cm[0].x0)):
        acc.add(spec, fm)
    return acc.finalize()
