"""Pure-numpy fallbacks for the superpixel inner loops.

These mirror ``_slic_cy`` exactly: per-element arithmetic is written in the
same order, assignment updates are strict improvements scanned in ascending
cluster order, and components are numbered by first raster occurrence, so
both backends produce bit-identical label maps (asserted by the benchmark).
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def assign_pixels(lab, cl, ca, cb, cx, cy, spatial_w, radius, labels, best):
    """One window-restricted SLIC assignment sweep (in-place).

    For each cluster k (ascending) every pixel in the (2*radius+1)^2 window
    around its centroid takes label k iff the combined distance is strictly
    below the pixel's current best.
    """
    h, w = labels.shape
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    for k in range(cl.shape[0]):
        x0 = max(int(cx[k]) - radius, 0)
        x1 = min(int(cx[k]) + radius + 1, w)
        y0 = max(int(cy[k]) - radius, 0)
        y1 = min(int(cy[k]) + radius + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        win = lab[y0:y1, x0:x1]
        dl = win[:, :, 0] - cl[k]
        da = win[:, :, 1] - ca[k]
        db = win[:, :, 2] - cb[k]
        dx = xs[x0:x1][None, :] - cx[k]
        dy = ys[y0:y1][:, None] - cy[k]
        d = ((dl * dl + da * da) + db * db) + (dx * dx + dy * dy) * spatial_w
        bwin = best[y0:y1, x0:x1]
        lwin = labels[y0:y1, x0:x1]
        better = d < bwin
        bwin[better] = d[better]
        lwin[better] = k


def own_distance(lab, cl, ca, cb, cx, cy, spatial_w, labels, best):
    """Reset each assigned pixel's best to the distance to its own centroid.

    Unassigned pixels (label -1) get +inf.  Keeping the own-centroid distance
    as the baseline makes the SLIC objective non-increasing even when a
    centroid drifts out of a pixel's search window.
    """
    h, w = labels.shape
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    lidx = np.maximum(labels, 0)
    dl = lab[:, :, 0] - cl[lidx]
    da = lab[:, :, 1] - ca[lidx]
    db = lab[:, :, 2] - cb[lidx]
    dx = xs - cx[lidx]
    dy = ys - cy[lidx]
    d = ((dl * dl + da * da) + db * db) + (dx * dx + dy * dy) * spatial_w
    best[:] = np.where(labels >= 0, d, np.inf)


def connected_components(labels):
    """4-connected components of a label map.

    Returns an int32 map whose component ids are assigned in order of each
    component's first pixel in raster scan.
    """
    h, w = labels.shape
    flat = labels.ravel()
    change = np.ones((h, w), dtype=bool)
    change[:, 1:] = labels[:, 1:] != labels[:, :-1]
    starts = np.flatnonzero(change.ravel())
    ends = np.append(starts[1:], h * w)
    run_row = starts // w
    run_c0 = starts - run_row * w
    run_c1 = ends - run_row * w
    run_label = flat[starts]
    n_runs = len(starts)

    parent = np.arange(n_runs, dtype=np.int64)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    row_first = np.searchsorted(run_row, np.arange(h + 1))
    for r in range(1, h):
        i = row_first[r - 1]
        j = row_first[r]
        iend = row_first[r]
        jend = row_first[r + 1]
        while i < iend and j < jend:
            if run_c0[i] < run_c1[j] and run_c0[j] < run_c1[i]:
                if run_label[i] == run_label[j]:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        if ri < rj:
                            parent[rj] = ri
                        else:
                            parent[ri] = rj
            if run_c1[i] <= run_c1[j]:
                i += 1
            else:
                j += 1

    roots = np.array([find(i) for i in range(n_runs)], dtype=np.int64)
    # renumber roots by first raster occurrence (runs are raster-ordered)
    comp_of_root = {}
    comp_ids = np.empty(n_runs, dtype=np.int32)
    next_id = 0
    for i in range(n_runs):
        r = roots[i]
        cid = comp_of_root.get(r)
        if cid is None:
            cid = next_id
            comp_of_root[r] = cid
            next_id += 1
        comp_ids[i] = cid
    return np.repeat(comp_ids, ends - starts).reshape(h, w)
