"""Fast built-in invariant checks behind `scenedistill selftest`.

Each check is a cheap, fully synthetic version of an invariant the test
suite covers at larger scale; the CLI exits 4 if any fails.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import distill, metrics, openvocab, projection, regions, superpixel, tensorio, vit_local


def _check_tensor_roundtrip():
    rng = np.random.default_rng(7)
    with tempfile.TemporaryDirectory() as td:
        for dtype in ("<f4", "<u2", "u1", "<i4"):
            arr = rng.integers(0, 200, size=(3, 5)).astype(dtype)
            path = Path(td) / "t.fot1"
            tensorio.write_tensor(path, arr)
            assert np.array_equal(tensorio.read_tensor(path), arr)


def _check_crop_schedule():
    crops = regions.generate_crops(640, 480, (1.0, 0.5, 0.25), 0.5)
    assert len(crops) == 59, f"expected 59 crops, got {len(crops)}"
    assert regions.crops_cover_view(crops, 640, 480)


def _check_fusion_identity():
    spec = regions.CropSpec(0, 0, 4, 4, 0)
    a = np.full((4, 4, 2), 0.1, dtype=np.float32)
    spec2 = regions.CropSpec(0, 0, 4, 4, 1)
    fused = regions.stitch_and_fuse([(spec, a), (spec2, a * 3)], 4, 4)
    assert np.allclose(fused, a * 2)


def _check_slic_quadrants():
    img = np.full((64, 64, 3), 120, dtype=np.uint8)
    sp = superpixel.slic(img, 4)
    assert sp.n_segments == 4
    areas = np.bincount(sp.labels.ravel(), minlength=4)
    assert np.all(np.abs(areas - 1024) <= 102), areas
    assert np.all(np.diff(sp.objective) <= 1e-9 * max(1.0, sp.objective[0]))


def _check_non_interference():
    cfg = vit_local.ViTConfig(image_size=16, patch_size=4, width=16, heads=4,
                              layers=2, embed_dim=8)
    w = vit_local.random_weights(cfg, seed=3)
    rng = np.random.default_rng(3)
    img = rng.random((16, 16, 3), dtype=np.float32)
    sets = [np.array([i % cfg.n_patches], dtype=np.int32) for i in range(7)]
    asn = regions.PatchAssignment(np.zeros(cfg.n_patches, np.int32), cfg.grid, sets, [])
    asn0 = regions.PatchAssignment(np.zeros(cfg.n_patches, np.int32), cfg.grid, [], [])
    t0, t7 = [], []
    vit_local.forward_tokens(img, w, asn0, 0, trace=t0)
    vit_local.forward_tokens(img, w, asn, 7, trace=t7)
    for a, b in zip(t0, t7):
        assert np.array_equal(a, b), "local tokens perturbed the vanilla path"


def _check_restricted_singleton():
    rng = np.random.default_rng(5)
    q = rng.standard_normal((1, 8)).astype(np.float32)
    k = rng.standard_normal((4, 8)).astype(np.float32)
    v = rng.standard_normal((4, 8)).astype(np.float32)
    out = vit_local.restricted_attention(q, k, v, [np.array([2])], heads=2)
    assert np.array_equal(out[0], v[2])


def _check_loss_identities():
    rng = np.random.default_rng(11)
    f = rng.standard_normal((20, 6)).astype(np.float32)
    t = projection.TargetFeatures(f.copy(), np.ones(20, np.uint32), np.ones(20, bool))
    assert abs(distill.distill_loss(f, t) + 1.0) < 1e-6
    assert abs(distill.distill_loss(2.5 * f, t) - distill.distill_loss(f, t)) < 1e-6
    assert -1.0 <= distill.distill_loss(rng.standard_normal((20, 6)).astype(np.float32), t) <= 1.0


def _check_gradients():
    rng = np.random.default_rng(13)
    pts = rng.random((12, 3)).astype(np.float32)
    cloud = tensorio.PointCloud(pts, (rng.random((12, 3)) * 255).astype(np.uint8))
    target = projection.TargetFeatures(
        rng.standard_normal((12, 5)).astype(np.float32),
        np.ones(12, np.uint32), np.ones(12, bool))
    params = distill.init_pointnet(5, hidden=6, seed=1)
    err = distill.finite_diff_check(
        params, lambda p: distill.scene_loss_and_grads(cloud, target, p), n_probes=12)
    assert err < 1e-4, f"gradient check error {err}"


def _check_projection():
    pose = np.eye(4, dtype=np.float32)
    intr = (100.0, 100.0, 50.0, 50.0)
    res = projection.project_point((0.0, 0.0, 1.0), pose, intr)
    assert res is not None and np.allclose(res, (50.0, 50.0, 1.0))
    p = projection.unproject_point(60.0, 44.0, 2.0, pose, intr)
    rt = projection.project_point(p, pose, intr)
    assert np.allclose(rt, (60.0, 44.0, 2.0), atol=1e-5)
    depth = np.full((100, 100), 1.0, dtype=np.float32)
    assert projection.depth_filter(1.05, 50, 50, depth, 0.1)
    assert not projection.depth_filter(1.5, 50, 50, depth, 0.1)


def _check_hiou_pins():
    assert abs(metrics.hiou(58.6, 51.6) - 54.9) <= 0.05
    assert abs(metrics.hiou(64.8, 26.1) - 37.2) <= 0.05


def _check_classify():
    rows = np.eye(4, dtype=np.float32)
    emb = openvocab.EmbeddingMatrix(rows, [str(i) for i in range(4)], normalized=True)
    seg = openvocab.classify_points(rows * 3.5, emb)
    assert np.array_equal(seg.labels, np.arange(4))
    assert np.allclose(seg.scores, 1.0)


CHECKS = [
    ("tensor round-trip", _check_tensor_roundtrip),
    ("crop schedule 59/coverage", _check_crop_schedule),
    ("fusion identity", _check_fusion_identity),
    ("slic quadrants + objective", _check_slic_quadrants),
    ("local-token non-interference", _check_non_interference),
    ("restricted attention singleton", _check_restricted_singleton),
    ("loss identities", _check_loss_identities),
    ("gradient finite differences", _check_gradients),
    ("projection round-trip + depth filter", _check_projection),
    ("harmonic-mean pins", _check_hiou_pins),
    ("classification identity", _check_classify),
]


def run(verbose: bool = True) -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as e:  # noqa: BLE001 - report every failure
            failures += 1
            if verbose:
                print(f"FAIL - {name}: {e}")
        else:
            if verbose:
                print(f"ok   - {name}")
    if verbose:
        print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed "
              f"(kernel backend: {superpixel.KERNEL_BACKEND})")
    return failures


if __name__ == "__main__":
    import sys

    sys.exit(4 if run() else 0)
