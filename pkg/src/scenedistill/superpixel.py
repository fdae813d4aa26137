"""SLIC superpixel partition of an image crop into locally similar regions.

The partition runs k-means-style sweeps in combined CIELAB + spatial space
with a window restriction, then enforces 4-connectivity by merging
undersized components into their largest adjacent segment.  The per-pixel
sweeps and component labeling run in the compiled backend when available
(``scenedistill._slic_cy``), otherwise in the numpy fallback; both produce
identical label maps.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

if os.environ.get("SCENEDISTILL_PURE") == "1":
    from . import _slic_np as _kern
else:
    try:
        from . import _slic_cy as _kern  # type: ignore[attr-defined]
    except ImportError:
        from . import _slic_np as _kern

KERNEL_BACKEND = _kern.BACKEND


@dataclass
class SuperpixelMap:
    """Dense per-pixel segment labels partitioning a crop."""

    labels: np.ndarray            # (H, W) i32 in [0, n_segments)
    n_segments: int
    centroids: np.ndarray         # (n_segments, 2) f32 (x, y) pixel coords
    objective: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """sRGB u8 (H, W, 3) to CIELAB f64 under D65."""
    c = image.astype(np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    m = np.array([
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ])
    xyz = lin @ m.T
    xyz /= np.array([0.95047, 1.0, 1.08883])
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _grid_dims(n_segments: int, w: int, h: int) -> tuple[int, int]:
    """Aspect-matched (nx, ny) with nx*ny ~ n_segments (half-up rounding,
    so a single requested segment gets a single seed)."""
    ny = min(h, max(1, int(math.sqrt(n_segments * h / w) + 0.5)))
    nx = min(w, max(1, int(n_segments / ny + 0.5)))
    return nx, ny


def _seed_grid(lab: np.ndarray, n_segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Regular grid of ~n_segments seeds, each perturbed to the strictly
    lowest-gradient pixel in its 3x3 window (center kept on ties)."""
    h, w = lab.shape[:2]
    nx, ny = _grid_dims(n_segments, w, h)
    grad = np.full((h, w), np.inf)
    if h >= 3 and w >= 3:
        gx = lab[1:-1, 2:] - lab[1:-1, :-2]
        gy = lab[2:, 1:-1] - lab[:-2, 1:-1]
        grad[1:-1, 1:-1] = (gx * gx).sum(axis=-1) + (gy * gy).sum(axis=-1)
    sx, sy = [], []
    for j in range(ny):
        y = int((j + 0.5) * h / ny)
        for i in range(nx):
            x = int((i + 0.5) * w / nx)
            bx, by, bg = x, y, grad[y, x]
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and grad[yy, xx] < bg:
                        bx, by, bg = xx, yy, grad[yy, xx]
            sx.append(bx)
            sy.append(by)
    return np.array(sx, dtype=np.float64), np.array(sy, dtype=np.float64)


def slic(image: np.ndarray, n_segments: int, compactness: float = 10.0,
         iterations: int = 10) -> SuperpixelMap:
    """Partition an RGB crop into ~n_segments connected superpixels.

    The recorded objective (sum of combined squared distances after each
    assignment sweep) is non-increasing; the reported segment count may
    differ from the request after connectivity enforcement.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    if not 1 <= n_segments <= h * w:
        raise ValueError(f"n_segments must be in [1, {h * w}], got {n_segments}")
    lab = np.ascontiguousarray(rgb_to_lab(image))
    cx, cy = _seed_grid(lab, n_segments)
    k = len(cx)
    iy = cy.astype(np.intp)
    ix = cx.astype(np.intp)
    cl = lab[iy, ix, 0].copy()
    ca = lab[iy, ix, 1].copy()
    cb = lab[iy, ix, 2].copy()

    s = math.sqrt(h * w / n_segments)
    spatial_w = (compactness / s) ** 2
    # the search window must reach every pixel from the seed grid
    nx, ny = _grid_dims(n_segments, w, h)
    radius = int(math.ceil(max(s, w / nx, h / ny))) + 1

    labels = np.full((h, w), -1, dtype=np.int32)
    best = np.full((h, w), np.inf, dtype=np.float64)
    objective = []
    for it in range(max(1, iterations)):
        if it > 0:
            counts = np.bincount(labels.ravel(), minlength=k).astype(np.float64)
            nz = counts > 0
            ys, xs = np.mgrid[0:h, 0:w]
            for arr, vals in ((cl, lab[:, :, 0]), (ca, lab[:, :, 1]), (cb, lab[:, :, 2]),
                              (cx, xs.astype(np.float64)), (cy, ys.astype(np.float64))):
                sums = np.bincount(labels.ravel(), weights=vals.ravel(), minlength=k)
                arr[nz] = sums[nz] / counts[nz]
            _kern.own_distance(lab, cl, ca, cb, cx, cy, spatial_w, labels, best)
        _kern.assign_pixels(lab, cl, ca, cb, cx, cy, spatial_w, radius, labels, best)
        if np.any(labels < 0):
            _assign_orphans(lab, cl, ca, cb, cx, cy, spatial_w, labels, best)
        objective.append(float(best.sum()))

    out = enforce_connectivity(labels, min_size=max(1, (h * w // n_segments) // 4))
    out.objective = np.array(objective)
    return out


def _assign_orphans(lab, cl, ca, cb, cx, cy, spatial_w, labels, best):
    """Assign any pixel no search window reached to its globally nearest
    centroid (possible only for extreme aspect ratios)."""
    ys, xs = np.nonzero(labels < 0)
    for y, x in zip(ys, xs):
        dl = lab[y, x, 0] - cl
        da = lab[y, x, 1] - ca
        db = lab[y, x, 2] - cb
        dx = x - cx
        dy = y - cy
        d = ((dl * dl + da * da) + db * db) + (dx * dx + dy * dy) * spatial_w
        labels[y, x] = int(np.argmin(d))
        best[y, x] = float(d.min())


def enforce_connectivity(labels: np.ndarray, min_size: int | None = None) -> SuperpixelMap:
    """Make every segment 4-connected.

    Components smaller than min_size (default (H*W/N)/4 for N input labels)
    are merged into their largest adjacent segment (ties: smallest component
    id); surviving components are relabeled compactly ordered by
    (original label, first pixel), so an already-valid map is unchanged.
    """
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    h, w = labels.shape
    if min_size is None:
        n_in = len(np.unique(labels))
        min_size = max(1, (h * w // max(1, n_in)) // 4)

    comp = _kern.connected_components(labels)
    n_comp = int(comp.max()) + 1
    flat = comp.ravel()
    sizes = np.bincount(flat, minlength=n_comp).astype(np.int64)
    ids, first = np.unique(flat, return_index=True)
    first_pixel = np.empty(n_comp, dtype=np.int64)
    first_pixel[ids] = first
    old_label = labels.ravel()[first_pixel]

    pairs = _adjacent_pairs(comp)
    parent = np.arange(n_comp, dtype=np.int64)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return int(i)

    if n_comp > 1:
        while True:
            pr = np.array([[find(a), find(b)] for a, b in pairs], dtype=np.int64)
            nbrs: dict[int, set[int]] = {}
            for a, b in pr:
                if a != b:
                    nbrs.setdefault(int(a), set()).add(int(b))
                    nbrs.setdefault(int(b), set()).add(int(a))
            roots = sorted({find(i) for i in range(n_comp)})
            changed = False
            for r in roots:
                if find(r) != r or sizes[r] >= min_size:
                    continue
                cand = {find(x) for x in nbrs.get(r, ())} - {r}
                if not cand:
                    continue
                target = min(cand, key=lambda t: (-sizes[t], t))
                parent[r] = target
                sizes[target] += sizes[r]
                changed = True
            if not changed:
                break

    roots = {find(i) for i in range(n_comp)}
    # order survivors by the earliest (old label, first pixel) among members
    keys = {}
    for i in range(n_comp):
        r = find(i)
        cand = (int(old_label[i]), int(first_pixel[i]))
        if r not in keys or cand < keys[r]:
            keys[r] = cand
    new_id = {r: i for i, r in enumerate(sorted(roots, key=lambda r: keys[r]))}
    lut = np.array([new_id[find(i)] for i in range(n_comp)], dtype=np.int32)
    out = lut[comp]
    n_seg = len(roots)
    return SuperpixelMap(out, n_seg, _centroids(out, n_seg))


def _adjacent_pairs(comp: np.ndarray) -> np.ndarray:
    a = comp[:, :-1].ravel()
    b = comp[:, 1:].ravel()
    m = a != b
    hpairs = np.stack([a[m], b[m]], axis=1)
    a = comp[:-1, :].ravel()
    b = comp[1:, :].ravel()
    m = a != b
    vpairs = np.stack([a[m], b[m]], axis=1)
    pairs = np.concatenate([hpairs, vpairs], axis=0)
    if len(pairs) == 0:
        return pairs.reshape(0, 2)
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def _centroids(labels: np.ndarray, n: int) -> np.ndarray:
    h, w = labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    counts = np.bincount(labels.ravel(), minlength=n).astype(np.float64)
    sx = np.bincount(labels.ravel(), weights=xs.ravel().astype(np.float64), minlength=n)
    sy = np.bincount(labels.ravel(), weights=ys.ravel().astype(np.float64), minlength=n)
    out = np.zeros((n, 2), dtype=np.float32)
    nz = counts > 0
    out[nz, 0] = (sx[nz] / counts[nz]).astype(np.float32)
    out[nz, 1] = (sy[nz] / counts[nz]).astype(np.float32)
    return out


def labels_to_png(spmap: SuperpixelMap, path) -> None:
    """Debug dump: the label map as an indexed PNG (labels mod 256)."""
    from PIL import Image

    Image.fromarray((spmap.labels % 256).astype(np.uint8), mode="P").save(path)
