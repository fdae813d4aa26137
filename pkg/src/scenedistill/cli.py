"""Command-line pipeline: extract, project, distill, segment, query,
pseudo-label, eval, selftest.

Every stage reads and writes plain files (FOT1 tensors, PNG/PLY, text
manifests), so cached outputs can be inspected or substituted by hand.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import distill, metrics, openvocab, pipeline, tensorio, vit_local
from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, NumericError, SceneDistillError

log = logging.getLogger("scenedistill")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key")


def _config(args) -> PipelineConfig:
    overrides = []
    for item in args.overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set wants KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), val.strip()))
    return load_config(args.config, overrides)


def _load_weights(cfg: PipelineConfig, flag: str | None) -> vit_local.ViTWeights:
    path = flag or cfg.weights
    if not path:
        raise ConfigError("no weight bundle given (--weights or config key 'weights')")
    if not Path(path).exists():
        raise ConfigError(f"weight bundle not found: {path}")
    return vit_local.load_weight_bundle(path)


def _point_features(args, cfg) -> tuple[np.ndarray, np.ndarray, tensorio.PointCloud]:
    """(features, valid_mask, cloud) from either a targets bundle or a
    distilled point-network bundle."""
    cloud = tensorio.load_point_cloud(args.scene)
    if getattr(args, "targets", None):
        t = pipeline.load_targets(args.targets)
        if len(t.features) != len(cloud.positions):
            raise DataError(
                f"targets have {len(t.features)} rows but the cloud has "
                f"{len(cloud.positions)} points"
            )
        return t.features, t.valid_mask, cloud
    if getattr(args, "model", None):
        params = distill.load_pointnet(args.model)
        feats = distill.forward_pointnet(cloud, params)
        return feats, np.ones(len(feats), dtype=bool), cloud
    raise ConfigError("give --targets or --model as the point-feature source")


def _load_embeddings(path, labelset: openvocab.LabelSet) -> openvocab.EmbeddingMatrix:
    if not path:
        raise ConfigError("no embeddings given (--embeddings or config key)")
    arr = tensorio.read_tensor(path)
    if arr.ndim not in (2, 3):
        raise DataError(f"{path}: embeddings must be (K, C) or (K, P, C)")
    if arr.shape[0] != len(labelset.names):
        raise ConfigError(
            f"label set has {len(labelset.names)} classes but embeddings have "
            f"{arr.shape[0]} rows"
        )
    if arr.ndim == 3:
        return openvocab.build_class_embeddings(arr, labelset.names)
    rows = arr.astype(np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise DataError(f"{path}: zero-norm embedding row")
    return openvocab.EmbeddingMatrix((rows / norms).astype(np.float32),
                                     list(labelset.names), normalized=True)


def _labelset(args) -> openvocab.LabelSet:
    path = getattr(args, "labelset", None)
    if not path:
        raise ConfigError("no label set given (--labelset)")
    return openvocab.load_label_set(path)


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args) -> int:
    cfg = _config(args)
    weights = _load_weights(cfg, args.weights)
    paths = pipeline.extract_scene(args.scene, args.out, cfg, weights, force=args.force)
    print(f"extracted {len(paths)} view feature maps -> {args.out}")
    return 0


def cmd_project(args) -> int:
    cfg = _config(args)
    targets = pipeline.project_scene(args.scene, args.features, cfg)
    pipeline.save_targets(args.out, targets)
    n_valid = int(targets.valid_mask.sum())
    print(f"projected {len(targets.features)} points "
          f"({n_valid} depth-visible) -> {args.out}")
    return 0


def cmd_distill(args) -> int:
    cfg = _config(args)
    if len(args.scene) != len(args.targets):
        raise ConfigError("--scene and --targets must be given pairwise")
    scenes = []
    for scene_dir, target_dir in zip(args.scene, args.targets):
        cloud = tensorio.load_point_cloud(scene_dir)
        targets = pipeline.load_targets(target_dir)
        if len(targets.features) != len(cloud.positions):
            raise DataError(f"{target_dir}: target rows do not match {scene_dir}")
        scenes.append((cloud, targets))
    schedule = distill.TrainSchedule(cfg.lr0, cfg.lr_decay, cfg.decay_every,
                                     cfg.steps, cfg.batch_scenes)
    params = distill.init_pointnet(scenes[0][1].features.shape[1],
                                   hidden=cfg.hidden, knn=cfg.knn, seed=cfg.seed)
    params, curve = distill.train(scenes, schedule, params)
    out = Path(args.out)
    distill.save_pointnet(out, params)
    distill.write_loss_curve(out / "loss.csv", curve)
    print(f"trained {params.n_params} parameters for {schedule.steps} steps; "
          f"final loss {curve[-1][2]:.4f} -> {out}")
    return 0


def cmd_segment(args) -> int:
    cfg = _config(args)
    labelset = _labelset(args)
    emb = _load_embeddings(args.embeddings or cfg.embeddings, labelset)
    feats, mask, cloud = _point_features(args, cfg)
    seg = openvocab.classify_points(feats, emb, valid_mask=mask)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "labels.fot1", seg.labels)
    tensorio.write_tensor(out / "scores.fot1", seg.scores)
    openvocab.segmentation_to_ply(cloud, seg.labels, out / "segmentation.ply",
                                  n_classes=len(labelset.names))
    labeled = int((seg.labels >= 0).sum())
    print(f"segmented {labeled}/{len(seg.labels)} points over "
          f"{len(labelset.names)} classes -> {out}")
    return 0


def cmd_query(args) -> int:
    cfg = _config(args)
    q = tensorio.read_tensor(args.embedding).astype(np.float32).ravel()
    feats, mask, cloud = _point_features(args, cfg)
    theta = args.theta if args.theta is not None else cfg.query_threshold
    rho = args.top_fraction
    if theta is None and rho is None:
        rho = cfg.query_top_fraction
    sel = openvocab.open_world_query(feats, q, threshold=theta, top_fraction=rho,
                                     valid_mask=mask)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "mask.fot1", sel.astype(np.uint8))
    openvocab.mask_to_ply(cloud, sel, out / "query.ply")
    print(f"query matched {int(sel.sum())}/{len(sel)} points -> {out}")
    return 0


def cmd_pseudo_label(args) -> int:
    cfg = _config(args)
    labelset = _labelset(args)
    emb = _load_embeddings(args.embeddings or cfg.embeddings, labelset)
    feats, mask, _cloud = _point_features(args, cfg)
    gt = tensorio.read_tensor(args.gt).astype(np.int32).ravel()
    if not labelset.unseen and not args.full_set:
        raise ConfigError("label set defines no unseen classes "
                          "(use --full-set for an unrestricted argmax)")
    labels = openvocab.generate_pseudo_labels(
        feats, emb, gt, labelset.unseen,
        restrict_to_unseen=not args.full_set, valid_mask=mask)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out, labels)
    filled = int(((gt < 0) & (labels >= 0)).sum())
    print(f"pseudo-labeled {filled} unlabeled points -> {out}")
    return 0


def cmd_eval(args) -> int:
    labelset = _labelset(args)
    pred = tensorio.read_tensor(args.pred).astype(np.int64).ravel()
    gt = tensorio.read_tensor(args.gt).astype(np.int64).ravel()
    k = len(labelset.names)
    eval_pred = pred.copy()
    ignored_pred = eval_pred < 0
    gt = np.where(ignored_pred, -1, gt)  # unpredicted points cannot be scored
    eval_pred[ignored_pred] = 0
    cm = metrics.accumulate(eval_pred, gt, k)
    report = metrics.format_report(labelset.names, cm, labelset)
    print(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report + "\n")
        metrics.write_report_csv(out / "report.csv", labelset.names, cm)
        print(f"report -> {out}")
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    failures = selftest.run(verbose=True)
    if failures:
        raise NumericError(f"{failures} self-test(s) failed")
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scenedistill", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="dense per-view features -> FOT1 cache")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="ViT weight bundle directory")
    p.add_argument("--force", action="store_true", help="recompute cached views")
    _add_config_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("project", help="fuse view features onto the point cloud")
    p.add_argument("--scene", required=True)
    p.add_argument("--features", required=True, help="directory from 'extract'")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("distill", help="train the point network on target features")
    p.add_argument("--scene", action="append", required=True)
    p.add_argument("--targets", action="append", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("segment", help="open-vocabulary semantic segmentation")
    p.add_argument("--scene", required=True)
    p.add_argument("--targets", help="target-features bundle (feature projection mode)")
    p.add_argument("--model", help="distilled point-network bundle")
    p.add_argument("--embeddings", help="FOT1 class embeddings (K,C) or (K,P,C)")
    p.add_argument("--labelset", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("query", help="open-world text-query mask")
    p.add_argument("--scene", required=True)
    p.add_argument("--targets")
    p.add_argument("--model")
    p.add_argument("--embedding", required=True, help="FOT1 query embedding (C,)")
    p.add_argument("--theta", type=float, help="absolute cosine threshold")
    p.add_argument("--top-fraction", type=float, help="keep the top fraction of points")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("pseudo-label", help="fill unlabeled points by classification")
    p.add_argument("--scene", required=True)
    p.add_argument("--targets")
    p.add_argument("--model")
    p.add_argument("--embeddings")
    p.add_argument("--labelset", required=True)
    p.add_argument("--gt", required=True, help="FOT1 i32 labels, -1 = unlabeled")
    p.add_argument("--full-set", action="store_true",
                   help="argmax over all classes instead of unseen only")
    p.add_argument("--out", required=True, help="output FOT1 label file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("eval", help="metric report from prediction/gt label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--labelset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SceneDistillError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
