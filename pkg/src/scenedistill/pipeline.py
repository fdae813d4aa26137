"""Stage functions wiring crops -> superpixels -> encoder -> fusion and the
per-scene projection pass; the CLI drives these and caches every stage
output on disk so any stage can be substituted by hand-written tensors."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import projection, regions, superpixel, tensorio, vit_local
from .config import PipelineConfig
from .errors import DataError

log = logging.getLogger(__name__)


def extract_view_features(image: np.ndarray, weights: vit_local.ViTWeights,
                          cfg: PipelineConfig) -> np.ndarray:
    """Dense (H, W, C) features for one view: per-crop superpixel features
    broadcast to pixels and averaged over the multi-scale crop schedule."""
    h, w = image.shape[:2]
    crops = regions.generate_crops(w, h, cfg.scales, cfg.stride_frac)
    acc = regions.FusionAccumulator(w, h, weights.config.embed_dim)
    for spec in crops:
        sub = image[spec.y0:spec.y0 + spec.h, spec.x0:spec.x0 + spec.w]
        n_seg = min(cfg.n_superpixels, spec.w * spec.h)
        spmap = superpixel.slic(sub, n_seg, cfg.compactness, cfg.slic_iterations)
        feats, _ = vit_local.forward_with_local_tokens(sub, spmap, weights)
        acc.add(spec, vit_local.broadcast_superpixel_features(feats, spmap))
    return acc.finalize()


def view_feature_path(out_dir, frame_id: str) -> Path:
    return Path(out_dir) / f"{frame_id}.fot1"


def extract_scene(scene_dir, out_dir, cfg: PipelineConfig,
                  weights: vit_local.ViTWeights, force: bool = False) -> list[Path]:
    """Extract and cache per-view feature maps for the subsampled frames."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame_ids = tensorio.subsample_frames(tensorio.list_frames(scene_dir), cfg.frame_stride)

    def run(fid: str) -> Path:
        path = view_feature_path(out, fid)
        if path.exists() and not force:
            log.info("view %s: cached", fid)
            return path
        frame = tensorio.load_frame(scene_dir, fid)
        fm = extract_view_features(frame.image, weights, cfg)
        tensorio.write_tensor(path, fm)
        log.info("view %s: %s", fid, fm.shape)
        return path

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(run, frame_ids))
    return [run(fid) for fid in frame_ids]


def project_scene(scene_dir, features_dir, cfg: PipelineConfig) -> projection.TargetFeatures:
    """Fuse cached per-view feature maps onto the scene's point cloud."""
    cloud = tensorio.load_point_cloud(scene_dir)
    frame_ids = tensorio.subsample_frames(tensorio.list_frames(scene_dir), cfg.frame_stride)
    views = []
    for fid in frame_ids:
        path = view_feature_path(features_dir, fid)
        if not path.exists():
            raise DataError(f"missing cached features for view {fid}: {path}")
        fm = tensorio.read_tensor(path)
        if fm.ndim != 3:
            raise DataError(f"{path}: expected a (H, W, C) tensor, got {fm.shape}")
        views.append((tensorio.load_frame(scene_dir, fid), fm.astype(np.float32)))
    return projection.fuse_multiview(cloud, views, cfg.depth_tau)


def save_targets(out_dir, targets: projection.TargetFeatures) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "features.fot1", targets.features)
    # the container carries i32; counts are far below 2^31
    tensorio.write_tensor(out / "view_count.fot1", targets.view_count.astype(np.int32))


def load_targets(bundle_dir) -> projection.TargetFeatures:
    bundle = Path(bundle_dir)
    fpath = bundle / "features.fot1"
    cpath = bundle / "view_count.fot1"
    if not fpath.exists() or not cpath.exists():
        raise DataError(f"{bundle}: expected features.fot1 and view_count.fot1")
    features = tensorio.read_tensor(fpath).astype(np.float32)
    count = tensorio.read_tensor(cpath)
    if count.shape != features.shape[:1]:
        raise DataError(f"{bundle}: view_count shape {count.shape} does not match "
                        f"features {features.shape}")
    count = count.astype(np.uint32)
    return projection.TargetFeatures(features, count, count > 0)
