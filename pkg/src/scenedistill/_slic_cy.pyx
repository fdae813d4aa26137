# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled superpixel inner loops (see _slic_np for the reference semantics).

Arithmetic is ordered exactly as in the numpy fallback so label maps match
bit-for-bit between backends.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def assign_pixels(double[:, :, ::1] lab,
                  double[::1] cl, double[::1] ca, double[::1] cb,
                  double[::1] cx, double[::1] cy,
                  double spatial_w, int radius,
                  int[:, ::1] labels, double[:, ::1] best):
    cdef Py_ssize_t h = labels.shape[0]
    cdef Py_ssize_t w = labels.shape[1]
    cdef Py_ssize_t k, x, y, x0, x1, y0, y1
    cdef double dl, da, db, dx, dy, d
    for k in range(cl.shape[0]):
        x0 = <Py_ssize_t>cx[k] - radius
        if x0 < 0:
            x0 = 0
        x1 = <Py_ssize_t>cx[k] + radius + 1
        if x1 > w:
            x1 = w
        y0 = <Py_ssize_t>cy[k] - radius
        if y0 < 0:
            y0 = 0
        y1 = <Py_ssize_t>cy[k] + radius + 1
        if y1 > h:
            y1 = h
        for y in range(y0, y1):
            dy = <double>y - cy[k]
            for x in range(x0, x1):
                dl = lab[y, x, 0] - cl[k]
                da = lab[y, x, 1] - ca[k]
                db = lab[y, x, 2] - cb[k]
                dx = <double>x - cx[k]
                d = ((dl * dl + da * da) + db * db) + (dx * dx + dy * dy) * spatial_w
                if d < best[y, x]:
                    best[y, x] = d
                    labels[y, x] = <int>k


def own_distance(double[:, :, ::1] lab,
                 double[::1] cl, double[::1] ca, double[::1] cb,
                 double[::1] cx, double[::1] cy,
                 double spatial_w,
                 int[:, ::1] labels, double[:, ::1] best):
    cdef Py_ssize_t h = labels.shape[0]
    cdef Py_ssize_t w = labels.shape[1]
    cdef Py_ssize_t x, y
    cdef int k
    cdef double dl, da, db, dx, dy
    cdef double inf = float("inf")
    for y in range(h):
        for x in range(w):
            k = labels[y, x]
            if k < 0:
                best[y, x] = inf
                continue
            dl = lab[y, x, 0] - cl[k]
            da = lab[y, x, 1] - ca[k]
            db = lab[y, x, 2] - cb[k]
            dx = <double>x - cx[k]
            dy = <double>y - cy[k]
            best[y, x] = ((dl * dl + da * da) + db * db) + (dx * dx + dy * dy) * spatial_w


def connected_components(int[:, ::1] labels):
    cdef Py_ssize_t h = labels.shape[0]
    cdef Py_ssize_t w = labels.shape[1]
    comp_arr = np.full((h, w), -1, dtype=np.int32)
    cdef int[:, ::1] comp = comp_arr
    stack_arr = np.empty(h * w, dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    cdef Py_ssize_t top, x, y, px, py, p
    cdef int next_id = 0
    cdef int lab_val
    for y in range(h):
        for x in range(w):
            if comp[y, x] >= 0:
                continue
            lab_val = labels[y, x]
            comp[y, x] = next_id
            stack[0] = y * w + x
            top = 1
            while top > 0:
                top -= 1
                p = <Py_ssize_t>stack[top]
                py = p // w
                px = p - py * w
                if px > 0 and comp[py, px - 1] < 0 and labels[py, px - 1] == lab_val:
                    comp[py, px - 1] = next_id
                    stack[top] = p - 1
                    top += 1
                if px + 1 < w and comp[py, px + 1] < 0 and labels[py, px + 1] == lab_val:
                    comp[py, px + 1] = next_id
                    stack[top] = p + 1
                    top += 1
                if py > 0 and comp[py - 1, px] < 0 and labels[py - 1, px] == lab_val:
                    comp[py - 1, px] = next_id
                    stack[top] = p - w
                    top += 1
                if py + 1 < h and comp[py + 1, px] < 0 and labels[py + 1, px] == lab_val:
                    comp[py + 1, px] = next_id
                    stack[top] = p + w
                    top += 1
            next_id += 1
    return comp_arr
