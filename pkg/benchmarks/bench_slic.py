"""Benchmark the compiled superpixel kernels against the numpy fallback.

Times the per-crop hot path (assignment sweeps + connectivity) on a
realistic view, asserts both backends produce identical label maps, and
reports the end-to-end extract throughput for a toy encoder.

Run:  python benchmarks/bench_slic.py [--size 640x480] [--segments 50]
"""
import argparse
import time

import numpy as np

from scenedistill import _slic_np
from scenedistill.config import PipelineConfig
from scenedistill.pipeline import extract_view_features
from scenedistill.vit_local import ViTConfig, random_weights

try:
    from scenedistill import _slic_cy
except ImportError:
    _slic_cy = None


def synth_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.stack([
        (xx * 255 / w).astype(np.uint8),
        (yy * 255 / h).astype(np.uint8),
        rng.integers(0, 255, (h, w)).astype(np.uint8),
    ], axis=-1)
    img[h // 4:h // 2, w // 4:w // 2] = (200, 30, 30)
    return img


def run_slic_with(kern, image, n_segments, iterations=10, compactness=10.0):
    """The slic() inner loop against an injectable kernel module."""
    import math

    from scenedistill.superpixel import _seed_grid, rgb_to_lab

    h, w = image.shape[:2]
    lab = np.ascontiguousarray(rgb_to_lab(image))
    cx, cy = _seed_grid(lab, n_segments)
    k = len(cx)
    iy, ix = cy.astype(np.intp), cx.astype(np.intp)
    cl, ca, cb = (lab[iy, ix, i].copy() for i in range(3))
    s = math.sqrt(h * w / n_segments)
    spatial_w = (compactness / s) ** 2
    nx = min(w, max(1, math.ceil(math.sqrt(n_segments * w / h))))
    ny = min(h, max(1, math.ceil(n_segments / nx)))
    radius = int(math.ceil(max(s, w / nx, h / ny))) + 1
    labels = np.full((h, w), -1, dtype=np.int32)
    best = np.full((h, w), np.inf)
    ys_, xs_ = np.mgrid[0:h, 0:w]
    for it in range(iterations):
        if it > 0:
            counts = np.bincount(labels.ravel(), minlength=k).astype(np.float64)
            nz = counts > 0
            for arr, vals in ((cl, lab[:, :, 0]), (ca, lab[:, :, 1]), (cb, lab[:, :, 2]),
                              (cx, xs_.astype(np.float64)), (cy, ys_.astype(np.float64))):
                sums = np.bincount(labels.ravel(), weights=vals.ravel(), minlength=k)
                arr[nz] = sums[nz] / counts[nz]
            kern.own_distance(lab, cl, ca, cb, cx, cy, spatial_w, labels, best)
        kern.assign_pixels(lab, cl, ca, cb, cx, cy, spatial_w, radius, labels, best)
    comp = kern.connected_components(labels)
    return labels, comp


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", default="640x480")
    ap.add_argument("--segments", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    w, h = (int(v) for v in args.size.split("x"))
    image = synth_image(h, w)

    backends = [("numpy", _slic_np)]
    if _slic_cy is not None:
        backends.append(("cython", _slic_cy))
    else:
        print("compiled kernels unavailable; timing the fallback only")

    results = {}
    outputs = {}
    for name, kern in backends:
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            labels, comp = run_slic_with(kern, image, args.segments)
            best = min(best, time.perf_counter() - t0)
        results[name] = best
        outputs[name] = (labels, comp)
        print(f"slic {w}x{h} N={args.segments:<4d} [{name:>6}]  {best * 1e3:8.1f} ms")

    if len(outputs) == 2:
        la, ca = outputs["numpy"]
        lb, cb = outputs["cython"]
        assert np.array_equal(la, lb), "backends disagree on labels"
        assert np.array_equal(ca, cb), "backends disagree on components"
        print(f"outputs identical; speedup {results['numpy'] / results['cython']:.1f}x")

    # end-to-end extract on a small view with a toy encoder, both backends
    import scenedistill.superpixel as sp

    cfg = PipelineConfig(scales=(1.0, 0.5), n_superpixels=args.segments)
    weights = random_weights(ViTConfig(image_size=32, patch_size=8, width=32,
                                       heads=4, layers=2, embed_dim=16), seed=0)
    view = synth_image(120, 160, seed=1)
    saved = sp._kern
    try:
        for name, kern in backends:
            sp._kern = kern
            t0 = time.perf_counter()
            fm = extract_view_features(view, weights, cfg)
            dt = time.perf_counter() - t0
            print(f"extract 160x120 toy encoder [{name:>6}]  {dt * 1e3:8.1f} ms "
                  f"({fm.shape})")
    finally:
        sp._kern = saved


if __name__ == "__main__":
    main()
